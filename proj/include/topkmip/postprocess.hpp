#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "volume.hpp"

namespace topkmip {

enum class connectivity { c6 = 6, c18 = 18, c26 = 26 };

inline connectivity connectivity_from_int(int c) {
    switch (c) {
    case 6: return connectivity::c6;
    case 18: return connectivity::c18;
    case 26: return connectivity::c26;
    }
    throw invalid_argument("connectivity must be 6, 18 or 26");
}

struct segmentation_config {
    double percentile = 95.0;
    connectivity conn = connectivity::c26;
    std::size_t min_component_size = 1; ///< components smaller than this are dropped
    std::size_t keep_largest = 0;       ///< if > 0, keep only the n largest components instead
};

inline void to_json(nlohmann::json& j, const segmentation_config& c) {
    j = nlohmann::json{{"percentile", c.percentile},
                       {"connectivity", static_cast<int>(c.conn)},
                       {"min_component_size", c.min_component_size},
                       {"keep_largest", c.keep_largest}};
}
inline void from_json(const nlohmann::json& j, segmentation_config& c) {
    segmentation_config d;
    c.percentile = j.value("percentile", d.percentile);
    c.conn = connectivity_from_int(j.value("connectivity", 26));
    c.min_component_size = j.value("min_component_size", d.min_component_size);
    c.keep_largest = j.value("keep_largest", d.keep_largest);
}

/// Cleanup size used for 256^3 volumes, scaled by voxel count for other sizes.
inline std::size_t scaled_min_component_size(extent3 dims, std::size_t at_256 = 50) {
    double s = static_cast<double>(at_256) * static_cast<double>(dims.size()) / (256.0 * 256.0 * 256.0);
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(s)));
}

/**
 * p-th percentile with linear interpolation between order statistics:
 * with sorted values x[0..n-1], r = p/100 * (n-1), the result is
 * x[floor(r)] + (r - floor(r)) * (x[floor(r)+1] - x[floor(r)]).
 * Example: values 1..100 and p = 95 give r = 94.05 and 95.05.
 */
inline double percentile(std::span<const float> values, double p) {
    if (values.empty())
        throw invalid_argument("percentile of an empty set");
    if (!(p >= 0.0 && p <= 100.0))
        throw invalid_argument("percentile must lie in [0, 100]");
    std::vector<float> v(values.begin(), values.end());
    double r = p / 100.0 * static_cast<double>(v.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(r));
    std::size_t hi = std::min(lo + 1, v.size() - 1);
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(lo), v.end());
    double a = v[lo];
    double b = a;
    if (hi != lo)
        b = *std::min_element(v.begin() + static_cast<std::ptrdiff_t>(lo) + 1, v.end());
    return a + (r - static_cast<double>(lo)) * (b - a);
}

/// mask[i] = 1 iff v[i] >= percentile(v, p).
inline volume percentile_threshold(const volume& v, double p) {
    for (float x : v.data())
        if (!std::isfinite(x))
            throw invalid_argument("percentile_threshold: volume contains non-finite values");
    double t = percentile(v.data(), p);
    volume out(v.dims(), v.spacing(), volume_kind::binary_mask);
    for (std::size_t i = 0; i < v.size(); ++i)
        out[i] = static_cast<double>(v[i]) >= t ? 1.0f : 0.0f;
    return out;
}

struct component_info {
    std::uint32_t label;
    std::size_t size;
    std::array<double, 3> centroid; ///< voxel coordinates
};

/// Label volume (0 = background, 1.. = components) plus per-label stats.
struct labeling {
    extent3 dims;
    std::vector<std::uint32_t> labels;
    std::vector<component_info> components; ///< components[i].label == i + 1

    void write_csv(std::ostream& os) const {
        os << "label,size,centroid_x,centroid_y,centroid_z\n";
        for (const auto& c : components)
            os << c.label << ',' << c.size << ',' << c.centroid[0] << ',' << c.centroid[1] << ','
               << c.centroid[2] << '\n';
    }
};

namespace detail {

inline std::vector<std::array<int, 3>> neighbour_offsets(connectivity conn) {
    std::vector<std::array<int, 3>> out;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                int m = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (m == 0)
                    continue;
                if (conn == connectivity::c6 && m > 1)
                    continue;
                if (conn == connectivity::c18 && m > 2)
                    continue;
                out.push_back({dx, dy, dz});
            }
    return out;
}

// Offsets that precede the current voxel in row-major (x fastest) order.
inline std::vector<std::array<int, 3>> backward_offsets(connectivity conn) {
    std::vector<std::array<int, 3>> out;
    for (auto o : neighbour_offsets(conn))
        if (o[2] < 0 || (o[2] == 0 && (o[1] < 0 || (o[1] == 0 && o[0] < 0))))
            out.push_back(o);
    return out;
}

class union_find {
  public:
    std::uint32_t make() {
        parent_.push_back(static_cast<std::uint32_t>(parent_.size()));
        return parent_.back();
    }
    std::uint32_t find(std::uint32_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    // The smaller root wins, so a component's root is its earliest provisional label.
    void unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a == b)
            return;
        if (a < b)
            parent_[b] = a;
        else
            parent_[a] = b;
    }

  private:
    std::vector<std::uint32_t> parent_;
};

} // namespace detail

/**
 * Two-pass union-find labeling. Labels are numbered 1, 2, ... in the order
 * in which each component's first voxel appears in row-major order, so the
 * result depends only on the mask.
 */
inline labeling connected_components(const volume& mask, connectivity conn = connectivity::c26) {
    if (!mask.is_mask())
        throw invalid_argument("connected_components: input is not a binary mask");
    const auto d = mask.dims();
    const auto back = detail::backward_offsets(conn);
    std::vector<std::uint32_t> prov(mask.size(), 0); // provisional label + 1
    detail::union_find uf;

    for (std::size_t z = 0; z < d.nz; ++z)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t x = 0; x < d.nx; ++x) {
                std::size_t i = mask.index(x, y, z);
                if (mask[i] == 0.0f)
                    continue;
                std::uint32_t mine = 0;
                for (auto o : back) {
                    long long nx = static_cast<long long>(x) + o[0], ny = static_cast<long long>(y) + o[1],
                              nz = static_cast<long long>(z) + o[2];
                    if (nx < 0 || ny < 0 || nz < 0 || nx >= static_cast<long long>(d.nx) ||
                        ny >= static_cast<long long>(d.ny))
                        continue;
                    std::uint32_t other = prov[mask.index(static_cast<std::size_t>(nx), static_cast<std::size_t>(ny),
                                                          static_cast<std::size_t>(nz))];
                    if (other == 0)
                        continue;
                    if (mine == 0)
                        mine = other;
                    else
                        uf.unite(mine - 1, other - 1);
                }
                prov[i] = mine != 0 ? mine : uf.make() + 1;
            }

    labeling out;
    out.dims = d;
    out.labels.assign(mask.size(), 0);
    std::vector<std::uint32_t> final_of_root;
    std::vector<std::array<double, 3>> sums;
    for (std::size_t z = 0; z < d.nz; ++z)
        for (std::size_t y = 0; y < d.ny; ++y)
            for (std::size_t x = 0; x < d.nx; ++x) {
                std::size_t i = mask.index(x, y, z);
                if (prov[i] == 0)
                    continue;
                std::uint32_t root = uf.find(prov[i] - 1);
                if (root >= final_of_root.size())
                    final_of_root.resize(root + 1, 0);
                if (final_of_root[root] == 0) {
                    final_of_root[root] = static_cast<std::uint32_t>(out.components.size() + 1);
                    out.components.push_back({final_of_root[root], 0, {0, 0, 0}});
                    sums.push_back({0, 0, 0});
                }
                std::uint32_t lab = final_of_root[root];
                out.labels[i] = lab;
                auto& c = out.components[lab - 1];
                ++c.size;
                sums[lab - 1][0] += static_cast<double>(x);
                sums[lab - 1][1] += static_cast<double>(y);
                sums[lab - 1][2] += static_cast<double>(z);
            }
    for (std::size_t c = 0; c < out.components.size(); ++c)
        for (int a = 0; a < 3; ++a)
            out.components[c].centroid[a] = sums[c][a] / static_cast<double>(out.components[c].size);
    return out;
}

/// Drop components below cfg.min_component_size, or keep only the
/// cfg.keep_largest biggest ones (ties broken by label) when that is set.
inline volume remove_small_components(const volume& mask, const segmentation_config& cfg) {
    if (cfg.min_component_size < 1)
        throw invalid_argument("min component size must be >= 1");
    auto lab = connected_components(mask, cfg.conn);
    std::vector<char> keep(lab.components.size() + 1, 0);
    if (cfg.keep_largest > 0) {
        std::vector<std::size_t> order(lab.components.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return lab.components[a].size > lab.components[b].size;
        });
        for (std::size_t i = 0; i < std::min(cfg.keep_largest, order.size()); ++i)
            keep[lab.components[order[i]].label] = 1;
    } else {
        for (const auto& c : lab.components)
            keep[c.label] = c.size >= cfg.min_component_size ? 1 : 0;
    }
    volume out(mask.dims(), mask.spacing(), volume_kind::binary_mask);
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = keep[lab.labels[i]] ? 1.0f : 0.0f;
    return out;
}

/// Threshold at the configured percentile, then remove small components.
inline volume segment(const volume& v, const segmentation_config& cfg) {
    return remove_small_components(percentile_threshold(v, cfg.percentile), cfg);
}

} // namespace topkmip
