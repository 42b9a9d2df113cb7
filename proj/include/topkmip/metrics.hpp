#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "postprocess.hpp"
#include "stack.hpp"
#include "volume.hpp"

namespace topkmip {

struct segmentation_report {
    double dsc = 0, iou = 0, sensitivity = 0, specificity = 0;
    std::optional<double> cldice;
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

    friend bool operator==(const segmentation_report&, const segmentation_report&) = default;
};

inline void to_json(nlohmann::json& j, const segmentation_report& r) {
    j = nlohmann::json{{"dsc", r.dsc}, {"iou", r.iou}, {"sen", r.sensitivity}, {"spe", r.specificity},
                       {"tp", r.tp},   {"fp", r.fp},   {"fn", r.fn},           {"tn", r.tn}};
    if (r.cldice)
        j["cldice"] = *r.cldice;
}
inline void from_json(const nlohmann::json& j, segmentation_report& r) {
    r.dsc = j.at("dsc").get<double>();
    r.iou = j.at("iou").get<double>();
    r.sensitivity = j.at("sen").get<double>();
    r.specificity = j.at("spe").get<double>();
    r.tp = j.value("tp", std::uint64_t{0});
    r.fp = j.value("fp", std::uint64_t{0});
    r.fn = j.value("fn", std::uint64_t{0});
    r.tn = j.value("tn", std::uint64_t{0});
    r.cldice = j.contains("cldice") ? std::optional<double>(j.at("cldice").get<double>()) : std::nullopt;
}

/// PSNR may be +infinity for identical inputs; JSON stores that as "inf".
struct image_quality_report {
    double psnr = 0;
    double ssim = 0;

    friend bool operator==(const image_quality_report&, const image_quality_report&) = default;
};

inline nlohmann::json encode_db(double x) {
    if (std::isinf(x))
        return x > 0 ? "inf" : "-inf";
    return x;
}
inline double decode_db(const nlohmann::json& j) {
    if (j.is_string()) {
        auto s = j.get<std::string>();
        if (s == "inf")
            return std::numeric_limits<double>::infinity();
        if (s == "-inf")
            return -std::numeric_limits<double>::infinity();
        throw format_error("bad PSNR value '" + s + "'");
    }
    return j.get<double>();
}

inline void to_json(nlohmann::json& j, const image_quality_report& r) {
    j = nlohmann::json{{"psnr", encode_db(r.psnr)}, {"ssim", r.ssim}};
}
inline void from_json(const nlohmann::json& j, image_quality_report& r) {
    r.psnr = decode_db(j.at("psnr"));
    r.ssim = j.at("ssim").get<double>();
}

/**
 * Confusion-count metrics. Empty-set conventions: if gt and pred are both
 * empty, dsc = iou = sen = 1; if gt is empty, sen = 1 only when pred is
 * empty too (else 0); spe = 1 when there are no gt-negative voxels.
 */
inline segmentation_report segmentation_metrics(const volume& pred, const volume& gt) {
    if (pred.dims() != gt.dims())
        throw dimension_error("segmentation_metrics: dims differ");
    segmentation_report r;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        bool p = pred[i] != 0.0f, g = gt[i] != 0.0f;
        if (p && g)
            ++r.tp;
        else if (p)
            ++r.fp;
        else if (g)
            ++r.fn;
        else
            ++r.tn;
    }
    auto ratio = [](std::uint64_t num, std::uint64_t den, double if_empty) {
        return den == 0 ? if_empty : static_cast<double>(num) / static_cast<double>(den);
    };
    r.dsc = ratio(2 * r.tp, 2 * r.tp + r.fp + r.fn, 1.0);
    r.iou = ratio(r.tp, r.tp + r.fp + r.fn, 1.0);
    r.sensitivity = ratio(r.tp, r.tp + r.fn, r.fp == 0 ? 1.0 : 0.0);
    r.specificity = ratio(r.tn, r.tn + r.fp, 1.0);
    return r;
}

namespace detail {

// 3x3x3 neighbourhood, index (dx+1) + 3*(dy+1) + 9*(dz+1); centre is 13.
using cube27 = std::array<bool, 27>;

inline cube27 neighbourhood(const volume& m, std::size_t x, std::size_t y, std::size_t z) {
    cube27 n{};
    const auto d = m.dims();
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                long long xx = static_cast<long long>(x) + dx, yy = static_cast<long long>(y) + dy,
                          zz = static_cast<long long>(z) + dz;
                bool inside = xx >= 0 && yy >= 0 && zz >= 0 && xx < static_cast<long long>(d.nx) &&
                              yy < static_cast<long long>(d.ny) && zz < static_cast<long long>(d.nz);
                n[(dx + 1) + 3 * (dy + 1) + 9 * (dz + 1)] =
                    inside && m.at(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy),
                                   static_cast<std::size_t>(zz)) != 0.0f;
            }
    return n;
}

inline int manhattan(int i) {
    return std::abs(i % 3 - 1) + std::abs((i / 3) % 3 - 1) + std::abs(i / 9 - 1);
}

// Components of `member` (cells of the cube other than the centre) under
// adjacency with max Manhattan step `step` (1 = 6-adjacency, 3 = 26).
// Returns per-cell component ids (-1 for non-members) and the count.
inline int cube_components(const std::array<bool, 27>& member, int step, std::array<int, 27>& comp) {
    comp.fill(-1);
    int count = 0;
    std::array<int, 27> stack{};
    for (int s = 0; s < 27; ++s) {
        if (!member[s] || comp[s] >= 0)
            continue;
        int top = 0;
        stack[top++] = s;
        comp[s] = count;
        while (top > 0) {
            int c = stack[--top];
            int cx = c % 3, cy = (c / 3) % 3, cz = c / 9;
            for (int t = 0; t < 27; ++t) {
                if (!member[t] || comp[t] >= 0)
                    continue;
                int ddx = std::abs(t % 3 - cx), ddy = std::abs((t / 3) % 3 - cy), ddz = std::abs(t / 9 - cz);
                if (std::max({ddx, ddy, ddz}) != 1)
                    continue;
                if (ddx + ddy + ddz > step)
                    continue;
                comp[t] = count;
                stack[top++] = t;
            }
        }
        ++count;
    }
    return count;
}

/**
 * Simple-point test for (26, 6) topology: the centre can be removed without
 * changing topology iff the foreground in N26 minus the centre forms exactly
 * one 26-component, and the background in N18 forms exactly one 6-component
 * that touches a face neighbour of the centre.
 */
inline bool is_simple(const cube27& n) {
    std::array<int, 27> comp{};
    cube27 fg = n;
    fg[13] = false;
    if (cube_components(fg, 3, comp) != 1)
        return false;
    cube27 bg{};
    for (int i = 0; i < 27; ++i)
        bg[i] = i != 13 && manhattan(i) <= 2 && !n[i];
    cube_components(bg, 1, comp);
    int touching = -1;
    for (int i : {4, 10, 12, 14, 16, 22}) { // the six face neighbours
        if (comp[i] < 0)
            continue;
        if (touching >= 0 && comp[i] != touching)
            return false;
        touching = comp[i];
    }
    return touching >= 0;
}

inline int foreground_neighbours(const cube27& n) {
    int c = 0;
    for (int i = 0; i < 27; ++i)
        c += (i != 13 && n[i]) ? 1 : 0;
    return c;
}

} // namespace detail

/**
 * Topology-preserving 3D thinning. Each pass visits six directional
 * sub-iterations (-z, +z, -y, +y, -x, +x); border voxels open in the current
 * direction are collected, then deleted one at a time in raster order if
 * they are still simple and not curve end points (exactly one foreground
 * neighbour). Repeats until a full pass deletes nothing.
 */
inline volume skeletonize(const volume& mask) {
    if (!mask.is_mask())
        throw invalid_argument("skeletonize: input is not a binary mask");
    volume m = mask;
    const auto d = m.dims();
    static constexpr std::array<std::array<int, 3>, 6> dirs{
        {{0, 0, -1}, {0, 0, 1}, {0, -1, 0}, {0, 1, 0}, {-1, 0, 0}, {1, 0, 0}}};
    std::vector<std::size_t> candidates;
    bool changed = true;
    while (changed) {
        changed = false;
        for (const auto& dir : dirs) {
            candidates.clear();
            for (std::size_t z = 0; z < d.nz; ++z)
                for (std::size_t y = 0; y < d.ny; ++y)
                    for (std::size_t x = 0; x < d.nx; ++x) {
                        if (m.at(x, y, z) == 0.0f)
                            continue;
                        long long xx = static_cast<long long>(x) + dir[0], yy = static_cast<long long>(y) + dir[1],
                                  zz = static_cast<long long>(z) + dir[2];
                        bool open = xx < 0 || yy < 0 || zz < 0 || xx >= static_cast<long long>(d.nx) ||
                                    yy >= static_cast<long long>(d.ny) || zz >= static_cast<long long>(d.nz) ||
                                    m.at(static_cast<std::size_t>(xx), static_cast<std::size_t>(yy),
                                         static_cast<std::size_t>(zz)) == 0.0f;
                        if (open)
                            candidates.push_back(m.index(x, y, z));
                    }
            for (std::size_t i : candidates) {
                std::size_t x = i % d.nx, y = (i / d.nx) % d.ny, z = i / (d.nx * d.ny);
                auto n = detail::neighbourhood(m, x, y, z);
                if (detail::foreground_neighbours(n) <= 1)
                    continue;
                if (!detail::is_simple(n))
                    continue;
                m[i] = 0.0f;
                changed = true;
            }
        }
    }
    return m;
}

/**
 * Centerline Dice: 2 * Tprec * Tsens / (Tprec + Tsens) with
 * Tprec = |skel(pred) & gt| / |skel(pred)| and Tsens = |skel(gt) & pred| / |skel(gt)|.
 * Two empty skeletons score 1, exactly one empty skeleton scores 0.
 */
inline double cl_dice(const volume& pred, const volume& gt) {
    if (pred.dims() != gt.dims())
        throw dimension_error("cl_dice: dims differ");
    auto sp = skeletonize(pred), sg = skeletonize(gt);
    std::uint64_t np = 0, ng = 0, p_in_g = 0, g_in_p = 0;
    for (std::size_t i = 0; i < sp.size(); ++i) {
        if (sp[i] != 0.0f) {
            ++np;
            p_in_g += gt[i] != 0.0f;
        }
        if (sg[i] != 0.0f) {
            ++ng;
            g_in_p += pred[i] != 0.0f;
        }
    }
    if (np == 0 && ng == 0)
        return 1.0;
    if (np == 0 || ng == 0)
        return 0.0;
    double tprec = static_cast<double>(p_in_g) / static_cast<double>(np);
    double tsens = static_cast<double>(g_in_p) / static_cast<double>(ng);
    return tprec + tsens == 0.0 ? 0.0 : 2.0 * tprec * tsens / (tprec + tsens);
}

/// Full report including clDice.
inline segmentation_report evaluate_segmentation(const volume& pred, const volume& gt) {
    auto r = segmentation_metrics(pred, gt);
    r.cldice = cl_dice(pred, gt);
    return r;
}

/**
 * PSNR = 10 log10(range^2 / MSE) in dB. `data_range` defaults to
 * max(b) - min(b). Identical inputs give +infinity.
 */
inline double psnr(std::span<const float> a, std::span<const float> b,
                   std::optional<double> data_range = std::nullopt) {
    if (a.size() != b.size())
        throw dimension_error("psnr: shapes differ");
    if (a.empty())
        throw invalid_argument("psnr: empty input");
    double range;
    if (data_range) {
        range = *data_range;
    } else {
        auto [lo, hi] = std::minmax_element(b.begin(), b.end());
        range = static_cast<double>(*hi) - static_cast<double>(*lo);
    }
    if (!(range > 0.0))
        throw invalid_argument("psnr: data range must be > 0");
    double sse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double e = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        sse += e * e;
    }
    if (sse == 0.0)
        return std::numeric_limits<double>::infinity();
    double mse = sse / static_cast<double>(a.size());
    return 10.0 * std::log10(range * range / mse);
}

inline double psnr(const projection_stack& a, const projection_stack& b,
                   std::optional<double> data_range = std::nullopt) {
    if (!(a.geometry() == b.geometry()))
        throw dimension_error("psnr: stack shapes differ");
    return psnr(a.data(), b.data(), data_range);
}

struct ssim_window {
    std::size_t size = 11;
    double sigma = 1.5;
    double k1 = 0.01, k2 = 0.03;
};

namespace detail {

inline std::vector<double> gaussian_taps(const ssim_window& w) {
    std::vector<double> g(w.size);
    double c = (static_cast<double>(w.size) - 1.0) / 2.0, s = 0.0;
    for (std::size_t i = 0; i < w.size; ++i) {
        double x = static_cast<double>(i) - c;
        g[i] = std::exp(-x * x / (2.0 * w.sigma * w.sigma));
        s += g[i];
    }
    for (auto& x : g)
        x /= s;
    return g;
}

// Sum of SSIM over all valid window positions of one image; returns count too.
inline std::pair<double, std::size_t> ssim_sum(std::span<const float> a, std::span<const float> b,
                                               std::size_t width, std::size_t height, double range,
                                               const ssim_window& w) {
    const auto g = gaussian_taps(w);
    const std::size_t ow = width - w.size + 1, oh = height - w.size + 1;
    // Separable filtering: rows first (valid), then columns (valid).
    std::array<std::vector<double>, 5> rows;
    for (auto& r : rows)
        r.assign(ow * height, 0.0);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double s[5] = {0, 0, 0, 0, 0};
            for (std::size_t t = 0; t < w.size; ++t) {
                double av = a[y * width + x + t], bv = b[y * width + x + t], gt = g[t];
                s[0] += gt * av;
                s[1] += gt * bv;
                s[2] += gt * av * av;
                s[3] += gt * bv * bv;
                s[4] += gt * av * bv;
            }
            for (int m = 0; m < 5; ++m)
                rows[m][y * ow + x] = s[m];
        }
    const double c1 = (w.k1 * range) * (w.k1 * range), c2 = (w.k2 * range) * (w.k2 * range);
    double total = 0.0;
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double s[5] = {0, 0, 0, 0, 0};
            for (std::size_t t = 0; t < w.size; ++t)
                for (int m = 0; m < 5; ++m)
                    s[m] += g[t] * rows[m][(y + t) * ow + x];
            double mu_a = s[0], mu_b = s[1];
            double var_a = s[2] - mu_a * mu_a, var_b = s[3] - mu_b * mu_b, cov = s[4] - mu_a * mu_b;
            total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                     ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
    return {total, ow * oh};
}

} // namespace detail

/**
 * Mean SSIM of two width x height images with a normalized Gaussian window,
 * evaluated at every position where the window fits inside the image.
 * `data_range` defaults to max(b) - min(b).
 */
inline double ssim(std::span<const float> a, std::span<const float> b, std::size_t width, std::size_t height,
                   std::optional<double> data_range = std::nullopt, const ssim_window& w = {}) {
    if (a.size() != b.size() || a.size() != width * height)
        throw dimension_error("ssim: shapes differ");
    if (width < w.size || height < w.size)
        throw invalid_argument("ssim: image smaller than window");
    double range;
    if (data_range) {
        range = *data_range;
    } else {
        auto [lo, hi] = std::minmax_element(b.begin(), b.end());
        range = static_cast<double>(*hi) - static_cast<double>(*lo);
    }
    auto [sum, n] = detail::ssim_sum(a, b, width, height, range, w);
    return sum / static_cast<double>(n);
}

/// Mean SSIM over the per-pixel maps of every view.
inline double ssim(const projection_stack& a, const projection_stack& b,
                   std::optional<double> data_range = std::nullopt, const ssim_window& w = {}) {
    if (!(a.geometry() == b.geometry()))
        throw dimension_error("ssim: stack shapes differ");
    if (a.nu() < w.size || a.nv() < w.size)
        throw invalid_argument("ssim: image smaller than window");
    double range;
    if (data_range) {
        range = *data_range;
    } else {
        auto [lo, hi] = std::minmax_element(b.data().begin(), b.data().end());
        range = static_cast<double>(*hi) - static_cast<double>(*lo);
    }
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t v = 0; v < a.n_views(); ++v) {
        auto [s, n] = detail::ssim_sum(a.view(v), b.view(v), a.nu(), a.nv(), range, w);
        total += s;
        count += n;
    }
    return total / static_cast<double>(count);
}

inline image_quality_report image_quality(const projection_stack& test, const projection_stack& reference,
                                          std::optional<double> data_range = std::nullopt) {
    return {psnr(test, reference, data_range), ssim(test, reference, data_range)};
}

} // namespace topkmip
