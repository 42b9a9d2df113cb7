#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "rng.hpp"
#include "volume.hpp"

namespace topkmip {

/**
 * Procedural vessel tree. Lengths are fractions of ny; radii are in voxels.
 * The defaults are tuned for 64^3 so that vessels fill roughly 5% of the
 * grid, matching a 95th-percentile threshold.
 */
struct phantom_config {
    extent3 dims{64, 64, 64};
    std::uint64_t seed = 1;
    std::size_t depth = 3;           ///< generations; 1 = a single tube
    double root_radius = 8.0;        ///< voxels
    double radius_decay = 0.82;      ///< child radius / parent radius, in (0, 1]
    double root_length = 0.4;        ///< fraction of ny
    double length_decay = 0.72;
    std::array<double, 2> branch_angle_deg{20.0, 40.0};
    double background_intensity = 0.3;
    double vessel_intensity = 0.7;
    double noise_sigma = 0.05;
};

inline void to_json(nlohmann::json& j, const phantom_config& c) {
    j = nlohmann::json{{"dims", {c.dims.nx, c.dims.ny, c.dims.nz}},
                       {"seed", c.seed},
                       {"depth", c.depth},
                       {"root_radius", c.root_radius},
                       {"radius_decay", c.radius_decay},
                       {"root_length", c.root_length},
                       {"length_decay", c.length_decay},
                       {"branch_angle_deg", c.branch_angle_deg},
                       {"background_intensity", c.background_intensity},
                       {"vessel_intensity", c.vessel_intensity},
                       {"noise_sigma", c.noise_sigma}};
}

inline void from_json(const nlohmann::json& j, phantom_config& c) {
    phantom_config d;
    auto dims = j.value("dims", std::array<std::size_t, 3>{d.dims.nx, d.dims.ny, d.dims.nz});
    c.dims = {dims[0], dims[1], dims[2]};
    c.seed = j.value("seed", d.seed);
    c.depth = j.value("depth", d.depth);
    c.root_radius = j.value("root_radius", d.root_radius);
    c.radius_decay = j.value("radius_decay", d.radius_decay);
    c.root_length = j.value("root_length", d.root_length);
    c.length_decay = j.value("length_decay", d.length_decay);
    c.branch_angle_deg = j.value("branch_angle_deg", d.branch_angle_deg);
    c.background_intensity = j.value("background_intensity", d.background_intensity);
    c.vessel_intensity = j.value("vessel_intensity", d.vessel_intensity);
    c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
}

/// Nodes in voxel coordinates; radii[i] is the radius of edges[i].
struct centerline_graph {
    std::vector<std::array<double, 3>> nodes;
    std::vector<std::array<std::size_t, 2>> edges;
    std::vector<double> radii;
};

inline void to_json(nlohmann::json& j, const centerline_graph& g) {
    j = nlohmann::json{{"nodes", g.nodes}, {"edges", g.edges}, {"radii", g.radii}};
}
inline void from_json(const nlohmann::json& j, centerline_graph& g) {
    g.nodes = j.at("nodes").get<std::vector<std::array<double, 3>>>();
    g.edges = j.at("edges").get<std::vector<std::array<std::size_t, 2>>>();
    g.radii = j.at("radii").get<std::vector<double>>();
}

struct vessel_phantom {
    volume mask;
    centerline_graph centerline;
    bool clipped = false; ///< some tube left the grid and was cut at the border
};

namespace detail {

using point3 = std::array<double, 3>;

inline point3 add(point3 a, point3 b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline point3 sub(point3 a, point3 b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline point3 scale(point3 a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
inline double dot(point3 a, point3 b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline point3 cross(point3 a, point3 b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline point3 normalized(point3 a) { return scale(a, 1.0 / std::sqrt(dot(a, a))); }

// Voxel centre (x+0.5, y+0.5, z+0.5) inside a flat-ended cylinder or a ball.
inline bool paint_cylinder(volume& m, point3 a, point3 b, double r) {
    const auto d = m.dims();
    point3 ab = sub(b, a);
    double len2 = dot(ab, ab);
    bool clipped = false;
    for (int ax = 0; ax < 3; ++ax) {
        double n = ax == 0 ? d.nx : ax == 1 ? d.ny : d.nz;
        double axial = len2 > 0 ? ab[ax] * ab[ax] / len2 : 0.0;
        double reach = r * std::sqrt(std::max(0.0, 1.0 - axial)); // end-disc half-width on this axis
        if (std::min(a[ax], b[ax]) - reach < 0.0 || std::max(a[ax], b[ax]) + reach > n)
            clipped = true;
    }
    auto lo = [&](int ax) { return std::max(0.0, std::floor(std::min(a[ax], b[ax]) - r - 1.0)); };
    auto hi = [&](int ax, std::size_t n) {
        return std::min(static_cast<double>(n), std::ceil(std::max(a[ax], b[ax]) + r + 1.0));
    };
    for (auto z = static_cast<std::size_t>(lo(2)); z < static_cast<std::size_t>(hi(2, d.nz)); ++z)
        for (auto y = static_cast<std::size_t>(lo(1)); y < static_cast<std::size_t>(hi(1, d.ny)); ++y)
            for (auto x = static_cast<std::size_t>(lo(0)); x < static_cast<std::size_t>(hi(0, d.nx)); ++x) {
                point3 p{x + 0.5, y + 0.5, z + 0.5};
                point3 ap = sub(p, a);
                double t = len2 > 0 ? dot(ap, ab) / len2 : 0.0;
                if (t < 0.0 || t > 1.0)
                    continue;
                point3 off = sub(ap, scale(ab, t));
                if (dot(off, off) <= r * r)
                    m.at(x, y, z) = 1.0f;
            }
    return clipped;
}

inline void paint_ball(volume& m, point3 c, double r) {
    const auto d = m.dims();
    auto lo = [&](double v) { return static_cast<std::size_t>(std::max(0.0, std::floor(v - r - 1.0))); };
    auto hi = [&](double v, std::size_t n) {
        return static_cast<std::size_t>(std::min(static_cast<double>(n), std::ceil(v + r + 1.0)));
    };
    for (std::size_t z = lo(c[2]); z < hi(c[2], d.nz); ++z)
        for (std::size_t y = lo(c[1]); y < hi(c[1], d.ny); ++y)
            for (std::size_t x = lo(c[0]); x < hi(c[0], d.nx); ++x) {
                point3 off = sub({x + 0.5, y + 0.5, z + 0.5}, c);
                if (dot(off, off) <= r * r)
                    m.at(x, y, z) = 1.0f;
            }
}

// Unit vector making `angle` with `dir`, rotated by azimuth `phi` about it.
inline point3 deflect(point3 dir, double angle, double phi) {
    point3 helper = std::abs(dir[0]) < 0.9 ? point3{1, 0, 0} : point3{0, 1, 0};
    point3 e1 = normalized(cross(dir, helper));
    point3 e2 = cross(dir, e1);
    point3 side = add(scale(e1, std::cos(phi)), scale(e2, std::sin(phi)));
    return normalized(add(scale(dir, std::cos(angle)), scale(side, std::sin(angle))));
}

} // namespace detail

/**
 * Recursive bifurcating tree. The root enters near the low-y face at the
 * centre of x and z, heading +y with a small random tilt. Every node of
 * generation < depth spawns two children deflected by an angle drawn from
 * branch_angle_deg, at opposite azimuths around the parent axis. Tubes are
 * flat-ended cylinders; balls of the parent radius fill interior joints.
 * Draws come from splitmix64(cfg.seed) in a fixed order.
 */
inline vessel_phantom generate_vessel_tree(const phantom_config& cfg) {
    if (cfg.depth < 1)
        throw invalid_argument("phantom: depth must be >= 1");
    if (!(cfg.root_radius > 0.0))
        throw invalid_argument("phantom: root radius must be > 0");
    if (!(cfg.radius_decay > 0.0 && cfg.radius_decay <= 1.0))
        throw invalid_argument("phantom: radius decay must lie in (0, 1]");
    if (!(cfg.root_length > 0.0) || !(cfg.length_decay > 0.0))
        throw invalid_argument("phantom: lengths must be > 0");

    splitmix64 rng(cfg.seed);
    vessel_phantom out{volume(cfg.dims, {}, volume_kind::binary_mask), {}, false};
    const auto& d = cfg.dims;
    constexpr double deg = std::numbers::pi / 180.0;

    detail::point3 start{d.nx / 2.0, 0.1 * d.ny, d.nz / 2.0};
    detail::point3 dir = detail::deflect({0, 1, 0}, rng.uniform(0.0, 10.0) * deg,
                                         rng.uniform(0.0, 2.0 * std::numbers::pi));

    struct pending {
        std::size_t from;
        detail::point3 dir;
        double length, radius;
        std::size_t generation;
    };
    out.centerline.nodes.push_back(start);
    std::vector<pending> work{{0, dir, cfg.root_length * d.ny, cfg.root_radius, 1}};
    while (!work.empty()) {
        pending seg = work.front();
        work.erase(work.begin());
        detail::point3 a = out.centerline.nodes[seg.from];
        detail::point3 b = detail::add(a, detail::scale(seg.dir, seg.length));
        std::size_t to = out.centerline.nodes.size();
        out.centerline.nodes.push_back(b);
        out.centerline.edges.push_back({seg.from, to});
        out.centerline.radii.push_back(seg.radius);
        out.clipped |= detail::paint_cylinder(out.mask, a, b, seg.radius);
        if (seg.generation >= cfg.depth)
            continue;
        detail::paint_ball(out.mask, b, seg.radius);
        double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (int c = 0; c < 2; ++c) {
            double angle = rng.uniform(cfg.branch_angle_deg[0], cfg.branch_angle_deg[1]) * deg;
            work.push_back({to, detail::deflect(seg.dir, angle, phi + c * std::numbers::pi),
                            seg.length * cfg.length_decay, seg.radius * cfg.radius_decay,
                            seg.generation + 1});
        }
    }
    return out;
}

/**
 * CT-like intensity volume: background everywhere, plus vessel_intensity on
 * the mask, plus Gaussian noise from splitmix64(seed ^ 0x5EED), clamped at 0.
 */
inline volume generate_ct_like(const volume& mask, const phantom_config& cfg) {
    if (!mask.is_mask())
        throw invalid_argument("generate_ct_like: input is not a binary mask");
    splitmix64 rng(cfg.seed ^ 0x5EEDull);
    volume ct(mask.dims(), mask.spacing(), volume_kind::intensity);
    for (std::size_t i = 0; i < ct.size(); ++i) {
        double v = cfg.background_intensity + cfg.vessel_intensity * mask[i];
        if (cfg.noise_sigma > 0.0)
            v += cfg.noise_sigma * rng.normal();
        ct[i] = static_cast<float>(std::max(0.0, v));
    }
    return ct;
}

} // namespace topkmip
