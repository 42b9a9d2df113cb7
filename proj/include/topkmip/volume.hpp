#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "raw_io.hpp"

namespace topkmip {

/// Voxel counts along x, y, z.
struct extent3 {
    std::size_t nx = 1, ny = 1, nz = 1;

    std::size_t size() const { return nx * ny * nz; }
    std::size_t max() const { return std::max({nx, ny, nz}); }
    friend bool operator==(const extent3&, const extent3&) = default;
};

/// Voxel edge lengths in mm.
struct spacing3 {
    double sx = 1.0, sy = 1.0, sz = 1.0;

    friend bool operator==(const spacing3&, const spacing3&) = default;
};

enum class volume_kind { intensity, binary_mask };

inline std::string to_string(volume_kind k) {
    return k == volume_kind::binary_mask ? "mask" : "intensity";
}

inline volume_kind volume_kind_from_string(const std::string& s) {
    if (s == "mask")
        return volume_kind::binary_mask;
    if (s == "intensity")
        return volume_kind::intensity;
    throw format_error("unknown volume kind '" + s + "'");
}

/**
 * Dense 3D float grid. Storage is row-major with x fastest:
 * index(x, y, z) = x + nx * (y + ny * z).
 *
 * A binary_mask volume holds only 0.0f and 1.0f; this is checked whenever
 * a mask is built from external data.
 */
class volume {
  public:
    volume() = default;

    explicit volume(extent3 dims, spacing3 spacing = {},
                    volume_kind kind = volume_kind::intensity, float fill = 0.0f)
        : dims_(dims), spacing_(spacing), kind_(kind) {
        validate_shape();
        data_.assign(dims.size(), fill);
        if (kind_ == volume_kind::binary_mask)
            validate_binary();
    }

    volume(extent3 dims, spacing3 spacing, volume_kind kind, std::vector<float> data)
        : dims_(dims), spacing_(spacing), kind_(kind), data_(std::move(data)) {
        validate_shape();
        if (data_.size() != dims_.size())
            throw dimension_error("volume data holds " + std::to_string(data_.size()) +
                                  " values, dims require " + std::to_string(dims_.size()));
        if (kind_ == volume_kind::binary_mask)
            validate_binary();
    }

    const extent3& dims() const { return dims_; }
    const spacing3& spacing() const { return spacing_; }
    volume_kind kind() const { return kind_; }
    bool is_mask() const { return kind_ == volume_kind::binary_mask; }
    std::size_t size() const { return data_.size(); }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    float operator[](std::size_t i) const { return data_[i]; }
    float& operator[](std::size_t i) { return data_[i]; }

    std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
        return x + dims_.nx * (y + dims_.ny * z);
    }
    float at(std::size_t x, std::size_t y, std::size_t z) const { return data_[index(x, y, z)]; }
    float& at(std::size_t x, std::size_t y, std::size_t z) { return data_[index(x, y, z)]; }

    /// Length of the bounding-box diagonal in mm.
    double diagonal() const {
        double lx = dims_.nx * spacing_.sx, ly = dims_.ny * spacing_.sy, lz = dims_.nz * spacing_.sz;
        return std::sqrt(lx * lx + ly * ly + lz * lz);
    }

    /// Reinterpret as a mask; throws if any value is not 0 or 1.
    volume as_mask() && {
        kind_ = volume_kind::binary_mask;
        validate_binary();
        return std::move(*this);
    }

    friend bool operator==(const volume&, const volume&) = default;

  private:
    void validate_shape() const {
        if (dims_.nx < 1 || dims_.ny < 1 || dims_.nz < 1)
            throw invalid_argument("volume dims must be >= 1 on every axis");
        if (!(spacing_.sx > 0) || !(spacing_.sy > 0) || !(spacing_.sz > 0))
            throw invalid_argument("volume spacing must be > 0 on every axis");
    }

    void validate_binary() const {
        for (float v : data_) {
            if (std::isnan(v))
                throw format_error("NaN in binary mask");
            if (v != 0.0f && v != 1.0f)
                throw invalid_argument("binary mask contains value other than 0/1");
        }
    }

    extent3 dims_{};
    spacing3 spacing_{};
    volume_kind kind_ = volume_kind::intensity;
    std::vector<float> data_ = std::vector<float>(1, 0.0f);
};

/// Everything in a volume sidecar except the payload.
struct volume_header {
    extent3 dims;
    spacing3 spacing;
    volume_kind kind = volume_kind::intensity;
    std::string dtype = "f32";
    std::string order = "little";

    friend bool operator==(const volume_header&, const volume_header&) = default;
};

inline void to_json(nlohmann::json& j, const volume_header& h) {
    j = nlohmann::json{{"dims", {h.dims.nx, h.dims.ny, h.dims.nz}},
                       {"spacing", {h.spacing.sx, h.spacing.sy, h.spacing.sz}},
                       {"kind", to_string(h.kind)},
                       {"dtype", h.dtype},
                       {"order", h.order}};
}

inline void from_json(const nlohmann::json& j, volume_header& h) {
    try {
        auto d = j.at("dims").get<std::array<std::size_t, 3>>();
        h.dims = {d[0], d[1], d[2]};
        auto s = j.value("spacing", std::array<double, 3>{1.0, 1.0, 1.0});
        h.spacing = {s[0], s[1], s[2]};
        h.kind = volume_kind_from_string(j.value("kind", std::string("intensity")));
        h.dtype = j.value("dtype", std::string("f32"));
        h.order = j.value("order", std::string("little"));
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("bad volume header: ") + e.what());
    }
}

inline volume_header header_of(const volume& v) {
    return {v.dims(), v.spacing(), v.kind(), "f32", "little"};
}

/// Writes `<path>` (raw little-endian f32) and `<path>.json`.
inline void save_volume(const volume& v, const std::filesystem::path& path) {
    raw_io::write_f32(path, v.data());
    raw_io::write_json(raw_io::header_path(path), nlohmann::json(header_of(v)));
}

inline volume load_volume(const std::filesystem::path& path) {
    auto hpath = raw_io::header_path(path);
    auto j = raw_io::read_json(hpath);
    raw_io::check_payload_tags(j, hpath);
    auto h = j.get<volume_header>();
    if (h.dims.nx < 1 || h.dims.ny < 1 || h.dims.nz < 1)
        throw format_error("header dims must be >= 1");
    auto data = raw_io::read_f32(path, h.dims.size());
    try {
        return volume(h.dims, h.spacing, h.kind, std::move(data));
    } catch (const invalid_argument& e) {
        throw format_error(std::string("invalid payload in '") + path.string() + "': " + e.what());
    }
}

/// output[i] = v[i] * mask[i]; keeps the kind of v.
inline volume apply_mask(const volume& v, const volume& mask) {
    if (v.dims() != mask.dims())
        throw dimension_error("apply_mask: volume and mask dims differ");
    if (!mask.is_mask())
        throw invalid_argument("apply_mask: mask is not a binary mask");
    volume out = v;
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = v[i] * mask[i];
    return out;
}

namespace detail {

// Center-aligned source coordinate for destination index i.
inline double source_coord(std::size_t i, std::size_t n_src, std::size_t n_dst) {
    double c = (static_cast<double>(i) + 0.5) * static_cast<double>(n_src) /
                   static_cast<double>(n_dst) -
               0.5;
    return std::clamp(c, 0.0, static_cast<double>(n_src - 1));
}

} // namespace detail

/**
 * Resize to `target` voxels keeping the physical extent. Voxel centers are
 * aligned (pixel-center convention) and coordinates are clamped at the
 * border. Intensity volumes use trilinear interpolation, masks use nearest
 * neighbour so the result stays binary.
 */
inline volume resample(const volume& v, extent3 target) {
    if (target.nx < 1 || target.ny < 1 || target.nz < 1)
        throw invalid_argument("resample: target dims must be >= 1");
    const auto& s = v.dims();
    spacing3 sp{v.spacing().sx * s.nx / target.nx, v.spacing().sy * s.ny / target.ny,
                v.spacing().sz * s.nz / target.nz};
    if (target == s)
        return volume(target, v.spacing(), v.kind(), std::vector<float>(v.data().begin(), v.data().end()));

    volume out(target, sp, v.kind());
    if (v.is_mask()) {
        auto nearest = [](std::size_t i, std::size_t n_src, std::size_t n_dst) {
            auto k = static_cast<std::size_t>((static_cast<double>(i) + 0.5) * n_src / n_dst);
            return std::min(k, n_src - 1);
        };
        for (std::size_t z = 0; z < target.nz; ++z)
            for (std::size_t y = 0; y < target.ny; ++y)
                for (std::size_t x = 0; x < target.nx; ++x)
                    out.at(x, y, z) = v.at(nearest(x, s.nx, target.nx), nearest(y, s.ny, target.ny),
                                           nearest(z, s.nz, target.nz));
        return out;
    }

    struct tap {
        std::size_t i0, i1;
        double w;
    };
    auto taps = [](std::size_t n_src, std::size_t n_dst) {
        std::vector<tap> t(n_dst);
        for (std::size_t i = 0; i < n_dst; ++i) {
            double c = detail::source_coord(i, n_src, n_dst);
            auto i0 = static_cast<std::size_t>(std::floor(c));
            std::size_t i1 = std::min(i0 + 1, n_src - 1);
            t[i] = {i0, i1, c - static_cast<double>(i0)};
        }
        return t;
    };
    auto tx = taps(s.nx, target.nx), ty = taps(s.ny, target.ny), tz = taps(s.nz, target.nz);
    for (std::size_t z = 0; z < target.nz; ++z)
        for (std::size_t y = 0; y < target.ny; ++y)
            for (std::size_t x = 0; x < target.nx; ++x) {
                const auto &a = tx[x], &b = ty[y], &c = tz[z];
                auto lerp = [](double p, double q, double w) { return p + (q - p) * w; };
                auto plane = [&](std::size_t zz) {
                    double r0 = lerp(v.at(a.i0, b.i0, zz), v.at(a.i1, b.i0, zz), a.w);
                    double r1 = lerp(v.at(a.i0, b.i1, zz), v.at(a.i1, b.i1, zz), a.w);
                    return lerp(r0, r1, b.w);
                };
                out.at(x, y, z) = static_cast<float>(lerp(plane(c.i0), plane(c.i1), c.w));
            }
    return out;
}

/// Affine rescale to [0, 1]; a constant volume maps to all zeros.
inline volume normalize_min_max(const volume& v) {
    auto [lo, hi] = std::minmax_element(v.data().begin(), v.data().end());
    float a = *lo, b = *hi;
    volume out(v.dims(), v.spacing(), volume_kind::intensity);
    if (b > a)
        for (std::size_t i = 0; i < v.size(); ++i)
            out[i] = (v[i] - a) / (b - a);
    return out;
}

} // namespace topkmip
