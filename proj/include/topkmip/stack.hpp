#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "geometry.hpp"
#include "raw_io.hpp"

namespace topkmip {

/// Per-view integral projections; layout [view][v][u], u fastest.
class projection_stack {
  public:
    projection_stack() = default;

    explicit projection_stack(projection_geometry g, float fill = 0.0f)
        : geom_(g), data_(g.n_rays(), fill) {}

    projection_stack(projection_geometry g, std::vector<float> data) : geom_(g), data_(std::move(data)) {
        if (data_.size() != geom_.n_rays())
            throw dimension_error("projection stack holds " + std::to_string(data_.size()) +
                                  " values, geometry requires " + std::to_string(geom_.n_rays()));
    }

    const projection_geometry& geometry() const { return geom_; }
    std::size_t n_views() const { return geom_.n_views(); }
    std::size_t nu() const { return geom_.nu(); }
    std::size_t nv() const { return geom_.nv(); }
    std::size_t size() const { return data_.size(); }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }
    float operator[](std::size_t i) const { return data_[i]; }
    float& operator[](std::size_t i) { return data_[i]; }

    std::span<const float> view(std::size_t i) const {
        return std::span(data_).subspan(i * geom_.pixels_per_view(), geom_.pixels_per_view());
    }
    std::span<float> view(std::size_t i) {
        return std::span(data_).subspan(i * geom_.pixels_per_view(), geom_.pixels_per_view());
    }
    float at(std::size_t view, std::size_t v, std::size_t u) const {
        return data_[(view * geom_.nv() + v) * geom_.nu() + u];
    }

    friend bool operator==(const projection_stack&, const projection_stack&) = default;

  private:
    projection_geometry geom_;
    std::vector<float> data_;
};

/**
 * Per-view top-k maxima; layout [view][channel][v][u]. Channel 0 holds the
 * largest sample of each ray and channels are non-increasing.
 */
class topk_stack {
  public:
    topk_stack() = default;

    topk_stack(projection_geometry g, std::size_t k) : geom_(g), k_(k), data_(g.n_rays() * k, 0.0f) {
        if (k < 1)
            throw invalid_argument("top-k stack: k must be >= 1");
    }

    topk_stack(projection_geometry g, std::size_t k, std::vector<float> data)
        : geom_(g), k_(k), data_(std::move(data)) {
        if (k < 1)
            throw invalid_argument("top-k stack: k must be >= 1");
        if (data_.size() != geom_.n_rays() * k_)
            throw dimension_error("top-k stack payload size does not match geometry and k");
    }

    const projection_geometry& geometry() const { return geom_; }
    std::size_t k() const { return k_; }
    std::size_t n_views() const { return geom_.n_views(); }
    std::size_t nu() const { return geom_.nu(); }
    std::size_t nv() const { return geom_.nv(); }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    /// One channel image of one view (nu * nv values).
    std::span<const float> channel(std::size_t view, std::size_t c) const {
        auto ppv = geom_.pixels_per_view();
        return std::span(data_).subspan((view * k_ + c) * ppv, ppv);
    }
    std::span<float> channel(std::size_t view, std::size_t c) {
        auto ppv = geom_.pixels_per_view();
        return std::span(data_).subspan((view * k_ + c) * ppv, ppv);
    }
    float at(std::size_t view, std::size_t c, std::size_t v, std::size_t u) const {
        return channel(view, c)[v * geom_.nu() + u];
    }

    friend bool operator==(const topk_stack&, const topk_stack&) = default;

  private:
    projection_geometry geom_;
    std::size_t k_ = 1;
    std::vector<float> data_;
};

namespace detail {

inline nlohmann::json stack_header(const projection_geometry& g, std::optional<std::size_t> k) {
    nlohmann::json h{{"n_views", g.n_views()}, {"nu", g.nu()}, {"nv", g.nv()},
                     {"geometry", g},         {"dtype", "f32"}, {"order", "little"}};
    if (k)
        h["k"] = *k;
    return h;
}

struct parsed_stack_header {
    projection_geometry geom;
    std::optional<std::size_t> k;
};

inline parsed_stack_header parse_stack_header(const std::filesystem::path& payload) {
    auto hpath = raw_io::header_path(payload);
    auto h = raw_io::read_json(hpath);
    raw_io::check_payload_tags(h, hpath);
    parsed_stack_header out;
    try {
        out.geom = h.at("geometry").get<projection_geometry>();
        if (h.at("n_views").get<std::size_t>() != out.geom.n_views() ||
            h.at("nu").get<std::size_t>() != out.geom.nu() || h.at("nv").get<std::size_t>() != out.geom.nv())
            throw format_error("stack header counts disagree with its geometry in '" + hpath.string() + "'");
        if (h.contains("k"))
            out.k = h.at("k").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw format_error("bad stack header '" + hpath.string() + "': " + e.what());
    } catch (const invalid_argument& e) {
        throw format_error("bad stack geometry '" + hpath.string() + "': " + e.what());
    }
    return out;
}

} // namespace detail

inline void save_stack(const projection_stack& s, const std::filesystem::path& path) {
    raw_io::write_f32(path, s.data());
    raw_io::write_json(raw_io::header_path(path), detail::stack_header(s.geometry(), std::nullopt));
}

inline void save_stack(const topk_stack& s, const std::filesystem::path& path) {
    raw_io::write_f32(path, s.data());
    raw_io::write_json(raw_io::header_path(path), detail::stack_header(s.geometry(), s.k()));
}

inline projection_stack load_projection_stack(const std::filesystem::path& path) {
    auto h = detail::parse_stack_header(path);
    if (h.k)
        throw format_error("'" + path.string() + "' is a top-k stack, expected integral projections");
    return {h.geom, raw_io::read_f32(path, h.geom.n_rays())};
}

inline topk_stack load_topk_stack(const std::filesystem::path& path) {
    auto h = detail::parse_stack_header(path);
    if (!h.k)
        throw format_error("'" + path.string() + "' has no k; expected a top-k stack");
    if (*h.k < 1)
        throw format_error("top-k stack header has k < 1");
    return {h.geom, *h.k, raw_io::read_f32(path, h.geom.n_rays() * *h.k)};
}

} // namespace topkmip
