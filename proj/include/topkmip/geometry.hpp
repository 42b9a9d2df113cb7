#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "error.hpp"
#include "volume.hpp"

namespace topkmip {

/// Inputs for make_geometry. A detector size of 0 means "max(volume dims)".
struct geometry_config {
    std::size_t n_views = 180;
    double angle_start_deg = 0.0;
    double angle_step_deg = 1.0;
    std::array<std::size_t, 2> detector{0, 0};
    std::array<double, 2> detector_spacing{1.0, 1.0};
};

/**
 * Parallel-beam view set rotating about the volume z axis.
 *
 * For view angle t the rays travel along d = (-sin t, cos t, 0) and the
 * detector column axis is e_u = (cos t, sin t, 0). Detector rows are
 * parallel to z. Pixel (u, v) is centred on the volume centre c:
 *   s_u = (u - (nu-1)/2) * du,  z_v = c_z + (v - (nv-1)/2) * dv.
 */
class projection_geometry {
  public:
    projection_geometry() = default;

    projection_geometry(std::size_t n_views, double angle_start_deg, double angle_step_deg,
                        std::size_t nu, std::size_t nv, double du = 1.0, double dv = 1.0)
        : n_views_(n_views), start_(angle_start_deg), step_(angle_step_deg), nu_(nu), nv_(nv),
          du_(du), dv_(dv) {
        validate();
    }

    std::size_t n_views() const { return n_views_; }
    double angle_start_deg() const { return start_; }
    double angle_step_deg() const { return step_; }
    std::size_t nu() const { return nu_; }
    std::size_t nv() const { return nv_; }
    double du() const { return du_; }
    double dv() const { return dv_; }
    std::size_t pixels_per_view() const { return nu_ * nv_; }
    std::size_t n_rays() const { return n_views_ * nu_ * nv_; }

    double angle_deg(std::size_t view) const { return start_ + static_cast<double>(view) * step_; }
    double angle_rad(std::size_t view) const { return angle_deg(view) * std::numbers::pi / 180.0; }

    friend bool operator==(const projection_geometry&, const projection_geometry&) = default;

  private:
    void validate() const {
        if (n_views_ < 1)
            throw invalid_argument("geometry: n_views must be >= 1");
        if (nu_ < 1 || nv_ < 1)
            throw invalid_argument("geometry: detector size must be >= 1");
        if (!(du_ > 0) || !(dv_ > 0))
            throw invalid_argument("geometry: detector spacing must be > 0");
        if (!std::isfinite(start_) || !std::isfinite(step_))
            throw invalid_argument("geometry: angles must be finite");
        double first = start_, last = angle_deg(n_views_ - 1);
        if (std::min(first, last) < 0.0 || std::max(first, last) >= 180.0)
            throw invalid_argument("geometry: all view angles must lie in [0, 180) degrees");
        if (n_views_ > 1 && step_ == 0.0)
            throw invalid_argument("geometry: angle step must be nonzero for multiple views");
    }

    std::size_t n_views_ = 1;
    double start_ = 0.0, step_ = 1.0;
    std::size_t nu_ = 1, nv_ = 1;
    double du_ = 1.0, dv_ = 1.0;
};

inline projection_geometry make_geometry(const geometry_config& cfg, extent3 dims = {}) {
    std::size_t nu = cfg.detector[0] ? cfg.detector[0] : dims.max();
    std::size_t nv = cfg.detector[1] ? cfg.detector[1] : dims.max();
    return {cfg.n_views, cfg.angle_start_deg, cfg.angle_step_deg, nu, nv,
            cfg.detector_spacing[0], cfg.detector_spacing[1]};
}

inline void to_json(nlohmann::json& j, const projection_geometry& g) {
    j = nlohmann::json{{"n_views", g.n_views()},
                       {"angle_start_deg", g.angle_start_deg()},
                       {"angle_step_deg", g.angle_step_deg()},
                       {"detector", {g.nu(), g.nv()}},
                       {"detector_spacing", {g.du(), g.dv()}}};
}

inline void from_json(const nlohmann::json& j, projection_geometry& g) {
    try {
        auto det = j.at("detector").get<std::array<std::size_t, 2>>();
        auto sp = j.value("detector_spacing", std::array<double, 2>{1.0, 1.0});
        g = projection_geometry(j.at("n_views").get<std::size_t>(),
                                j.value("angle_start_deg", 0.0), j.value("angle_step_deg", 1.0),
                                det[0], det[1], sp[0], sp[1]);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("bad geometry JSON: ") + e.what());
    }
}

inline void to_json(nlohmann::json& j, const geometry_config& c) {
    j = nlohmann::json{{"n_views", c.n_views},
                       {"angle_start_deg", c.angle_start_deg},
                       {"angle_step_deg", c.angle_step_deg},
                       {"detector", c.detector},
                       {"detector_spacing", c.detector_spacing}};
}

inline void from_json(const nlohmann::json& j, geometry_config& c) {
    geometry_config d;
    c.n_views = j.value("n_views", d.n_views);
    c.angle_start_deg = j.value("angle_start_deg", d.angle_start_deg);
    c.angle_step_deg = j.value("angle_step_deg", d.angle_step_deg);
    c.detector = j.value("detector", d.detector);
    c.detector_spacing = j.value("detector_spacing", d.detector_spacing);
}

using vec3 = std::array<double, 3>;

struct ray {
    vec3 origin{};
    vec3 direction{0.0, 1.0, 0.0}; ///< unit length
    std::size_t view = 0, u = 0, v = 0;
};

/// One voxel crossed by a ray and the chord length inside it (mm).
struct ray_segment {
    std::size_t index;
    double length;

    friend bool operator==(const ray_segment&, const ray_segment&) = default;
};

/// Ray through detector pixel (u, v) of `view`; starts outside the volume.
inline ray make_ray(const projection_geometry& g, extent3 dims, spacing3 sp, std::size_t view,
                    std::size_t u, std::size_t v) {
    double t = g.angle_rad(view);
    double c = std::cos(t), s = std::sin(t);
    // Snap round-off so axis-aligned views are exactly axis-aligned.
    if (std::abs(c) < 1e-12)
        c = 0.0;
    if (std::abs(s) < 1e-12)
        s = 0.0;
    double norm = std::hypot(c, s);
    c /= norm;
    s /= norm;
    vec3 centre{dims.nx * sp.sx / 2.0, dims.ny * sp.sy / 2.0, dims.nz * sp.sz / 2.0};
    double su = (static_cast<double>(u) - (static_cast<double>(g.nu()) - 1.0) / 2.0) * g.du();
    double zv = centre[2] + (static_cast<double>(v) - (static_cast<double>(g.nv()) - 1.0) / 2.0) * g.dv();
    double reach = std::hypot(dims.nx * sp.sx, dims.ny * sp.sy) / 2.0 + 1.0;
    ray r;
    r.direction = {-s, c, 0.0};
    r.origin = {centre[0] + su * c - reach * r.direction[0],
                centre[1] + su * s - reach * r.direction[1], zv};
    r.view = view;
    r.u = u;
    r.v = v;
    return r;
}

/**
 * Exact ray/voxel intersection (Siddon's parametric method).
 *
 * The ray is a half-line origin + a * direction, a >= 0. Voxel k on an axis
 * covers the half-open interval [k*s, (k+1)*s); a ray lying exactly on a
 * boundary plane is therefore attributed to the voxel with the larger index,
 * and a ray on the far face of the box misses it.
 *
 * Segments are returned in traversal order with strictly positive lengths.
 */
inline std::vector<ray_segment> trace_ray(const ray& r, extent3 dims, spacing3 sp) {
    std::vector<ray_segment> out;
    const std::array<std::size_t, 3> n{dims.nx, dims.ny, dims.nz};
    const std::array<double, 3> h{sp.sx, sp.sy, sp.sz};
    const auto& o = r.origin;
    const auto& d = r.direction;

    double a_min = 0.0, a_max = std::numeric_limits<double>::infinity();
    for (int ax = 0; ax < 3; ++ax) {
        double len = static_cast<double>(n[ax]) * h[ax];
        if (d[ax] == 0.0) {
            if (o[ax] < 0.0 || o[ax] >= len)
                return out;
            continue;
        }
        double t0 = (0.0 - o[ax]) / d[ax], t1 = (len - o[ax]) / d[ax];
        a_min = std::max(a_min, std::min(t0, t1));
        a_max = std::min(a_max, std::max(t0, t1));
    }
    if (!(a_max > a_min))
        return out;

    std::vector<double> alphas;
    alphas.reserve(n[0] + n[1] + n[2] + 2);
    alphas.push_back(a_min);
    alphas.push_back(a_max);
    for (int ax = 0; ax < 3; ++ax) {
        if (d[ax] == 0.0)
            continue;
        for (std::size_t k = 0; k <= n[ax]; ++k) {
            double a = (static_cast<double>(k) * h[ax] - o[ax]) / d[ax];
            if (a > a_min && a < a_max)
                alphas.push_back(a);
        }
    }
    std::sort(alphas.begin(), alphas.end());

    const double tol = 1e-12 * std::max({1.0, std::abs(a_max), n[0] * h[0], n[1] * h[1], n[2] * h[2]});
    double dnorm = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    out.reserve(alphas.size());
    for (std::size_t i = 0; i + 1 < alphas.size(); ++i) {
        double a0 = alphas[i], a1 = alphas[i + 1];
        if (a1 - a0 <= tol)
            continue;
        double am = 0.5 * (a0 + a1);
        std::array<std::size_t, 3> idx{};
        for (int ax = 0; ax < 3; ++ax) {
            double p = o[ax] + am * d[ax];
            auto k = static_cast<long long>(std::floor(p / h[ax]));
            idx[ax] = static_cast<std::size_t>(std::clamp<long long>(k, 0, static_cast<long long>(n[ax]) - 1));
        }
        std::size_t lin = idx[0] + n[0] * (idx[1] + n[1] * idx[2]);
        double len = (a1 - a0) * dnorm;
        if (!out.empty() && out.back().index == lin)
            out.back().length += len;
        else
            out.push_back({lin, len});
    }
    return out;
}

/**
 * Explicit sparse projection operator in CSR layout. Row r corresponds to
 * ray (view, v, u) with r = (view * nv + v) * nu + u; within a row voxel
 * indices are strictly increasing.
 */
class system_matrix {
  public:
    system_matrix() = default;

    std::size_t n_rays() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
    std::size_t n_voxels() const { return dims_.size(); }
    std::size_t n_entries() const { return indices_.size(); }
    const projection_geometry& geometry() const { return geom_; }
    extent3 dims() const { return dims_; }
    spacing3 spacing() const { return spacing_; }

    std::span<const std::size_t> row_indices(std::size_t r) const {
        return std::span(indices_).subspan(offsets_[r], offsets_[r + 1] - offsets_[r]);
    }
    std::span<const double> row_lengths(std::size_t r) const {
        return std::span(lengths_).subspan(offsets_[r], offsets_[r + 1] - offsets_[r]);
    }

    friend bool operator==(const system_matrix&, const system_matrix&) = default;

  private:
    friend system_matrix build_system_matrix(const projection_geometry&, extent3, spacing3, std::size_t);

    projection_geometry geom_;
    extent3 dims_;
    spacing3 spacing_;
    std::vector<std::size_t> offsets_{0};
    std::vector<std::size_t> indices_;
    std::vector<double> lengths_;
};

/// Thrown when an explicit matrix would exceed the entry budget.
class memory_budget_error : public error {
  public:
    using error::error;
};

/// Default cap on stored (index, length) pairs: 64M entries (~1 GiB).
inline constexpr std::size_t default_matrix_entry_budget = std::size_t{64} << 20;

/**
 * Trace every ray of `g` in 3D and store the result. Intended for small
 * volumes and for validating the matrix-free projector; large problems
 * should stay matrix-free.
 */
inline system_matrix build_system_matrix(const projection_geometry& g, extent3 dims, spacing3 sp,
                                         std::size_t max_entries = default_matrix_entry_budget) {
    system_matrix m;
    m.geom_ = g;
    m.dims_ = dims;
    m.spacing_ = sp;
    m.offsets_.reserve(g.n_rays() + 1);
    for (std::size_t view = 0; view < g.n_views(); ++view)
        for (std::size_t v = 0; v < g.nv(); ++v)
            for (std::size_t u = 0; u < g.nu(); ++u) {
                auto segs = trace_ray(make_ray(g, dims, sp, view, u, v), dims, sp);
                std::sort(segs.begin(), segs.end(),
                          [](const ray_segment& a, const ray_segment& b) { return a.index < b.index; });
                for (std::size_t i = 0; i < segs.size(); ++i) {
                    if (i > 0 && segs[i].index == m.indices_.back()) {
                        m.lengths_.back() += segs[i].length;
                        continue;
                    }
                    if (m.indices_.size() >= max_entries)
                        throw memory_budget_error("system matrix exceeds entry budget of " +
                                                  std::to_string(max_entries) +
                                                  "; use the matrix-free projector");
                    m.indices_.push_back(segs[i].index);
                    m.lengths_.push_back(segs[i].length);
                }
                m.offsets_.push_back(m.indices_.size());
            }
    return m;
}

} // namespace topkmip
