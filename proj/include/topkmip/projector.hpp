#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <vector>

#include "geometry.hpp"
#include "parallel.hpp"
#include "stack.hpp"
#include "volume.hpp"

namespace topkmip {

/**
 * Rays of one view and detector column share their in-plane path: every
 * view direction has zero z component, so a ray only differs between
 * detector rows by which z slice it runs through. An in-plane trace stores
 * the (x + nx*y, length) segments once and `slice_of_row` maps each detector
 * row to a slice offset (or -1 when the row misses the volume).
 */
struct view_plane_trace {
    std::vector<std::vector<ray_segment>> columns; ///< one entry per detector column u
};

namespace detail {

inline std::vector<long long> slice_of_row(const projection_geometry& g, extent3 dims, spacing3 sp) {
    std::vector<long long> rows(g.nv(), -1);
    double zc = dims.nz * sp.sz / 2.0;
    double lz = dims.nz * sp.sz;
    for (std::size_t v = 0; v < g.nv(); ++v) {
        double z = zc + (static_cast<double>(v) - (static_cast<double>(g.nv()) - 1.0) / 2.0) * g.dv();
        if (z >= 0.0 && z < lz)
            rows[v] = std::min<long long>(static_cast<long long>(std::floor(z / sp.sz)),
                                          static_cast<long long>(dims.nz) - 1);
    }
    return rows;
}

inline view_plane_trace trace_view_plane(const projection_geometry& g, extent3 dims, spacing3 sp,
                                         std::size_t view) {
    extent3 plane{dims.nx, dims.ny, 1};
    view_plane_trace t;
    t.columns.resize(g.nu());
    for (std::size_t u = 0; u < g.nu(); ++u) {
        ray r = make_ray(g, dims, sp, view, u, 0);
        r.origin[2] = 0.5 * sp.sz;
        t.columns[u] = trace_ray(r, plane, sp);
    }
    return t;
}

} // namespace detail

/**
 * Forward/adjoint projection by re-tracing rays on every call. Memory use is
 * independent of the number of views.
 *
 * forward: parallel over views, each output pixel written by one task.
 * adjoint: views are processed in fixed-size batches; within a batch the
 * work is split over z slices. Both results are bit-identical for any
 * worker count.
 */
class matrix_free_projector {
  public:
    matrix_free_projector(projection_geometry g, extent3 dims, spacing3 sp = {}, unsigned workers = 0)
        : geom_(g), dims_(dims), spacing_(sp), workers_(workers),
          rows_(detail::slice_of_row(g, dims, sp)) {}

    const projection_geometry& geometry() const { return geom_; }
    extent3 dims() const { return dims_; }
    spacing3 spacing() const { return spacing_; }
    unsigned workers() const { return workers_; }

    projection_stack forward(const volume& x) const {
        check_volume(x);
        projection_stack out(geom_);
        const std::size_t plane = dims_.nx * dims_.ny;
        auto data = x.data();
        parallel_for(geom_.n_views(), workers_, [&](std::size_t view) {
            auto t = detail::trace_view_plane(geom_, dims_, spacing_, view);
            auto img = out.view(view);
            for (std::size_t v = 0; v < geom_.nv(); ++v) {
                if (rows_[v] < 0)
                    continue;
                const float* slice = data.data() + static_cast<std::size_t>(rows_[v]) * plane;
                for (std::size_t u = 0; u < geom_.nu(); ++u) {
                    double acc = 0.0;
                    for (const auto& s : t.columns[u])
                        acc += s.length * slice[s.index];
                    img[v * geom_.nu() + u] = static_cast<float>(acc);
                }
            }
        });
        return out;
    }

    volume adjoint(const projection_stack& p) const {
        check_stack(p);
        const std::size_t plane = dims_.nx * dims_.ny;
        std::vector<double> acc(dims_.size(), 0.0);
        std::vector<std::vector<std::size_t>> rows_of_slice(dims_.nz);
        for (std::size_t v = 0; v < geom_.nv(); ++v)
            if (rows_[v] >= 0)
                rows_of_slice[static_cast<std::size_t>(rows_[v])].push_back(v);

        constexpr std::size_t batch = 16;
        std::vector<view_plane_trace> traces;
        for (std::size_t first = 0; first < geom_.n_views(); first += batch) {
            std::size_t count = std::min(batch, geom_.n_views() - first);
            traces.assign(count, {});
            parallel_for(count, workers_, [&](std::size_t i) {
                traces[i] = detail::trace_view_plane(geom_, dims_, spacing_, first + i);
            });
            parallel_for(dims_.nz, workers_, [&](std::size_t z) {
                double* slice = acc.data() + z * plane;
                for (std::size_t i = 0; i < count; ++i) {
                    auto img = p.view(first + i);
                    for (std::size_t v : rows_of_slice[z])
                        for (std::size_t u = 0; u < geom_.nu(); ++u) {
                            double w = img[v * geom_.nu() + u];
                            if (w == 0.0)
                                continue;
                            for (const auto& s : traces[i].columns[u])
                                slice[s.index] += s.length * w;
                        }
                }
            });
        }
        volume out(dims_, spacing_);
        for (std::size_t i = 0; i < acc.size(); ++i)
            out[i] = static_cast<float>(acc[i]);
        return out;
    }

  private:
    void check_volume(const volume& x) const {
        if (x.dims() != dims_ || x.spacing() != spacing_)
            throw dimension_error("projector: volume grid does not match projector grid");
    }
    void check_stack(const projection_stack& p) const {
        if (!(p.geometry() == geom_))
            throw dimension_error("projector: stack geometry does not match projector geometry");
    }

    projection_geometry geom_;
    extent3 dims_;
    spacing3 spacing_;
    unsigned workers_;
    std::vector<long long> rows_;
};

/// Projector backed by a materialized system_matrix.
class explicit_projector {
  public:
    explicit explicit_projector(const system_matrix& a, unsigned workers = 0) : a_(&a), workers_(workers) {}

    const projection_geometry& geometry() const { return a_->geometry(); }
    extent3 dims() const { return a_->dims(); }
    spacing3 spacing() const { return a_->spacing(); }

    projection_stack forward(const volume& x) const {
        if (x.dims() != a_->dims())
            throw dimension_error("projector: volume grid does not match system matrix");
        projection_stack out(a_->geometry());
        auto data = x.data();
        parallel_for(a_->n_rays(), workers_, [&](std::size_t r) {
            auto idx = a_->row_indices(r);
            auto len = a_->row_lengths(r);
            double acc = 0.0;
            for (std::size_t i = 0; i < idx.size(); ++i)
                acc += len[i] * data[idx[i]];
            out[r] = static_cast<float>(acc);
        });
        return out;
    }

    volume adjoint(const projection_stack& p) const {
        if (!(p.geometry() == a_->geometry()))
            throw dimension_error("projector: stack geometry does not match system matrix");
        std::vector<double> acc(a_->n_voxels(), 0.0);
        for (std::size_t r = 0; r < a_->n_rays(); ++r) {
            double w = p[r];
            auto idx = a_->row_indices(r);
            auto len = a_->row_lengths(r);
            for (std::size_t i = 0; i < idx.size(); ++i)
                acc[idx[i]] += len[i] * w;
        }
        volume out(a_->dims(), a_->spacing());
        for (std::size_t i = 0; i < acc.size(); ++i)
            out[i] = static_cast<float>(acc[i]);
        return out;
    }

  private:
    const system_matrix* a_;
    unsigned workers_;
};

/// Anything with forward(volume) -> stack and adjoint(stack) -> volume.
template <typename P>
concept projector = requires(const P& p, const volume& x, const projection_stack& s) {
    { p.forward(x) } -> std::same_as<projection_stack>;
    { p.adjoint(s) } -> std::same_as<volume>;
    { p.geometry() } -> std::convertible_to<projection_geometry>;
    { p.dims() } -> std::convertible_to<extent3>;
    { p.spacing() } -> std::convertible_to<spacing3>;
};

inline projection_stack forward_apply(const system_matrix& a, const volume& x, unsigned workers = 0) {
    return explicit_projector(a, workers).forward(x);
}

inline volume adjoint_apply(const system_matrix& a, const projection_stack& p) {
    return explicit_projector(a, 1).adjoint(p);
}

inline projection_stack forward_apply(const projection_geometry& g, const volume& x, unsigned workers = 0) {
    return matrix_free_projector(g, x.dims(), x.spacing(), workers).forward(x);
}

inline volume adjoint_apply(const projection_geometry& g, const projection_stack& p, extent3 dims,
                            spacing3 sp = {}, unsigned workers = 0) {
    return matrix_free_projector(g, dims, sp, workers).adjoint(p);
}

} // namespace topkmip
