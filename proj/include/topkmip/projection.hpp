#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <vector>

#include "error.hpp"
#include "geometry.hpp"
#include "parallel.hpp"
#include "projector.hpp"
#include "stack.hpp"
#include "volume.hpp"

namespace topkmip {

/**
 * Integral projection: each pixel is the sum of chord length times voxel
 * value along its ray. For a binary vessel mask (mu = 1 inside) this is the
 * path length of the ray through the vessels. Shares the traversal with
 * matrix_free_projector::forward, so the two agree exactly.
 */
inline projection_stack integral_projection(const volume& v, const projection_geometry& g,
                                            unsigned workers = 0) {
    return matrix_free_projector(g, v.dims(), v.spacing(), workers).forward(v);
}

/// Transmitted intensity R = R0 * exp(-p) for each line integral p.
inline projection_stack simulate_transmission(const projection_stack& line_integrals, double r0 = 1.0) {
    if (!(r0 > 0.0))
        throw invalid_argument("reference intensity R0 must be > 0");
    projection_stack out(line_integrals.geometry());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>(r0 * std::exp(-static_cast<double>(line_integrals[i])));
    return out;
}

/// Attenuation line integrals -ln(R / R0) from transmitted intensities.
inline projection_stack beer_lambert_form(const projection_stack& transmitted, double r0 = 1.0) {
    if (!(r0 > 0.0))
        throw invalid_argument("reference intensity R0 must be > 0");
    projection_stack out(transmitted.geometry());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<float>(-std::log(static_cast<double>(transmitted[i]) / r0));
    return out;
}

namespace detail {

/**
 * Keeps the k largest of a stream of samples. Internally a min-heap whose
 * root is the smallest retained value; a new sample replaces it only when
 * strictly larger, so among equal values the earlier sample is kept.
 */
class topk_selector {
  public:
    explicit topk_selector(std::size_t k) : k_(k) { heap_.reserve(k); }

    void clear() { heap_.clear(); }

    void push(float x) {
        if (heap_.size() < k_) {
            heap_.push_back(x);
            std::push_heap(heap_.begin(), heap_.end(), std::greater<>{});
        } else if (x > heap_.front()) {
            std::pop_heap(heap_.begin(), heap_.end(), std::greater<>{});
            heap_.back() = x;
            std::push_heap(heap_.begin(), heap_.end(), std::greater<>{});
        }
    }

    /// Writes the retained values in descending order, zero-padded to k.
    template <typename Out>
    void drain_descending(Out&& out) {
        std::sort_heap(heap_.begin(), heap_.end(), std::greater<>{});
        for (std::size_t c = 0; c < k_; ++c)
            out(c, c < heap_.size() ? heap_[c] : 0.0f);
    }

  private:
    std::size_t k_;
    std::vector<float> heap_;
};

} // namespace detail

/**
 * Top-k maximum intensity projection. Each sample along a ray is the chord
 * length times the voxel value (the length-weighted convention: with unit
 * spacing an axis-aligned ray sees raw voxel values, oblique rays see
 * shorter chords). Channel c holds the (c+1)-th largest sample; rays that
 * cross fewer than k voxels are zero-padded.
 *
 * Selection per ray is O(n log k). Outputs involve no accumulation and are
 * bit-identical for every worker count.
 */
inline topk_stack topk_mip(const volume& vol, const projection_geometry& g, std::size_t k,
                           unsigned workers = 0) {
    if (k < 1)
        throw invalid_argument("topk_mip: k must be >= 1");
    topk_stack out(g, k);
    const auto dims = vol.dims();
    const auto sp = vol.spacing();
    const auto rows = detail::slice_of_row(g, dims, sp);
    const std::size_t plane = dims.nx * dims.ny;
    auto data = vol.data();
    parallel_for(g.n_views(), workers, [&](std::size_t view) {
        auto t = detail::trace_view_plane(g, dims, sp, view);
        detail::topk_selector sel(k);
        for (std::size_t v = 0; v < g.nv(); ++v) {
            if (rows[v] < 0)
                continue;
            const float* slice = data.data() + static_cast<std::size_t>(rows[v]) * plane;
            for (std::size_t u = 0; u < g.nu(); ++u) {
                sel.clear();
                for (const auto& s : t.columns[u])
                    sel.push(static_cast<float>(s.length * slice[s.index]));
                std::size_t pix = v * g.nu() + u;
                sel.drain_descending([&](std::size_t c, float x) { out.channel(view, c)[pix] = x; });
            }
        }
    });
    return out;
}

/// Classical MIP with the same sample convention (the k = 1 case).
inline projection_stack max_intensity_projection(const volume& vol, const projection_geometry& g,
                                                 unsigned workers = 0) {
    auto t = topk_mip(vol, g, 1, workers);
    return projection_stack(g, std::vector<float>(t.data().begin(), t.data().end()));
}

/// Sum over the k channels of each pixel.
inline projection_stack topk_channel_sum(const topk_stack& t) {
    projection_stack out(t.geometry());
    const std::size_t ppv = t.geometry().pixels_per_view();
    for (std::size_t view = 0; view < t.n_views(); ++view) {
        auto dst = out.view(view);
        for (std::size_t c = 0; c < t.k(); ++c) {
            auto src = t.channel(view, c);
            for (std::size_t i = 0; i < ppv; ++i)
                dst[i] += src[i];
        }
    }
    return out;
}

/**
 * Min-max normalize one image to 8 bits: round(255 * (x - min) / (max - min)).
 * A constant image maps to all zeros.
 */
inline std::vector<std::uint8_t> to_gray8(std::span<const float> img) {
    std::vector<std::uint8_t> out(img.size(), 0);
    if (img.empty())
        return out;
    auto [lo, hi] = std::minmax_element(img.begin(), img.end());
    double a = *lo, b = *hi;
    if (!(b > a))
        return out;
    for (std::size_t i = 0; i < img.size(); ++i)
        out[i] = static_cast<std::uint8_t>(std::lround(255.0 * (img[i] - a) / (b - a)));
    return out;
}

/// Binary PGM (P5): width nu, height nv.
inline void write_pgm(std::span<const float> img, std::size_t width, std::size_t height,
                      const std::filesystem::path& path) {
    if (img.size() != width * height)
        throw dimension_error("write_pgm: image size does not match width * height");
    auto gray = to_gray8(img);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw io_error("cannot open '" + path.string() + "' for writing");
    out << "P5\n" << width << ' ' << height << "\n255\n";
    out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
    if (!out)
        throw io_error("write failed for '" + path.string() + "'");
}

inline void export_image(const projection_stack& s, std::size_t view, const std::filesystem::path& path) {
    if (view >= s.n_views())
        throw invalid_argument("export_image: view index out of range");
    write_pgm(s.view(view), s.nu(), s.nv(), path);
}

inline void export_image(const topk_stack& s, std::size_t view, std::size_t channel,
                         const std::filesystem::path& path) {
    if (view >= s.n_views())
        throw invalid_argument("export_image: view index out of range");
    if (channel >= s.k())
        throw invalid_argument("export_image: channel index out of range");
    write_pgm(s.channel(view, channel), s.nu(), s.nv(), path);
}

} // namespace topkmip
