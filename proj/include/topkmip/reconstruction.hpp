#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <fftw3.h>
#include <nlohmann/json.hpp>

#include "error.hpp"
#include "parallel.hpp"
#include "projector.hpp"
#include "stack.hpp"
#include "volume.hpp"

namespace topkmip {

enum class fbp_filter { ram_lak, hann, none };

struct fbp_config {
    fbp_filter filter = fbp_filter::ram_lak;
    double cutoff = 1.0; ///< fraction of Nyquist, in (0, 1]
};

inline std::string to_string(fbp_filter f) {
    switch (f) {
    case fbp_filter::ram_lak: return "ram-lak";
    case fbp_filter::hann: return "hann";
    case fbp_filter::none: return "none";
    }
    return "ram-lak";
}

inline fbp_filter fbp_filter_from_string(const std::string& s) {
    if (s == "ram-lak" || s == "ramlak")
        return fbp_filter::ram_lak;
    if (s == "hann")
        return fbp_filter::hann;
    if (s == "none")
        return fbp_filter::none;
    throw invalid_argument("unknown FBP filter '" + s + "'");
}

inline void to_json(nlohmann::json& j, const fbp_config& c) {
    j = nlohmann::json{{"filter", to_string(c.filter)}, {"cutoff", c.cutoff}};
}
inline void from_json(const nlohmann::json& j, fbp_config& c) {
    c.filter = fbp_filter_from_string(j.value("filter", std::string("ram-lak")));
    c.cutoff = j.value("cutoff", 1.0);
}

namespace detail {

inline std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n)
        p <<= 1;
    return p;
}

template <typename T>
struct fftw_deleter {
    void operator()(T* p) const { fftw_free(p); }
};
template <typename T>
using fftw_buffer = std::unique_ptr<T[], fftw_deleter<T>>;

template <typename T>
fftw_buffer<T> fftw_alloc(std::size_t n) {
    return fftw_buffer<T>(static_cast<T*>(fftw_malloc(sizeof(T) * n)));
}

/**
 * Frequency response of the band-limited ramp filter on a padded grid of
 * n samples. Built from the spatial Ram-Lak kernel
 *   h(0) = 1/(4 du^2), h(m odd) = -1/(pi^2 m^2 du^2), h(m even) = 0
 * so the discrete response has no DC offset, then scaled by du.
 */
inline std::vector<double> ramp_response(std::size_t n, double du, const fbp_config& cfg) {
    std::vector<double> h(n, 0.0);
    h[0] = 1.0 / (4.0 * du * du);
    for (std::size_t i = 1; i < n; ++i) {
        long long m = static_cast<long long>(i <= n / 2 ? i : n - i);
        if (m % 2 == 1)
            h[i] = -1.0 / (std::numbers::pi * std::numbers::pi * static_cast<double>(m * m) * du * du);
    }
    std::size_t nf = n / 2 + 1;
    auto in = fftw_alloc<double>(n);
    auto out = fftw_alloc<fftw_complex>(nf);
    std::copy(h.begin(), h.end(), in.get());
    fftw_plan plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
    fftw_execute(plan);
    fftw_destroy_plan(plan);

    std::vector<double> resp(nf);
    for (std::size_t j = 0; j < nf; ++j) {
        double f = static_cast<double>(j) / static_cast<double>(n / 2); // 0 .. 1 (Nyquist)
        double r = cfg.filter == fbp_filter::none ? 1.0 : out[j][0] * du;
        if (f > cfg.cutoff)
            r = 0.0;
        else if (cfg.filter == fbp_filter::hann)
            r *= 0.5 * (1.0 + std::cos(std::numbers::pi * f / cfg.cutoff));
        resp[j] = r;
    }
    return resp;
}

} // namespace detail

/**
 * Filter every detector row of every view along u with the configured ramp
 * filter. Rows are zero-padded to the next power of two >= 2 * nu so the
 * product in frequency space is a linear (not circular) convolution.
 */
inline projection_stack ramp_filter(const projection_stack& p, const fbp_config& cfg, unsigned workers = 0) {
    if (!(cfg.cutoff > 0.0 && cfg.cutoff <= 1.0))
        throw invalid_argument("FBP cutoff must lie in (0, 1]");
    const auto& g = p.geometry();
    const std::size_t nu = g.nu(), nv = g.nv();
    const std::size_t n = detail::next_pow2(2 * nu);
    const std::size_t nf = n / 2 + 1;
    const auto resp = detail::ramp_response(n, g.du(), cfg);

    // Plans are created once here; fftw_execute_dft_* on them is thread safe.
    auto proto_in = detail::fftw_alloc<double>(n);
    auto proto_out = detail::fftw_alloc<fftw_complex>(nf);
    fftw_plan fwd = fftw_plan_dft_r2c_1d(static_cast<int>(n), proto_in.get(), proto_out.get(), FFTW_ESTIMATE);
    fftw_plan inv = fftw_plan_dft_c2r_1d(static_cast<int>(n), proto_out.get(), proto_in.get(), FFTW_ESTIMATE);

    projection_stack out(g);
    parallel_for(g.n_views(), workers, [&](std::size_t view) {
        auto buf = detail::fftw_alloc<double>(n);
        auto spec = detail::fftw_alloc<fftw_complex>(nf);
        auto src = p.view(view);
        auto dst = out.view(view);
        for (std::size_t v = 0; v < nv; ++v) {
            std::fill(buf.get(), buf.get() + n, 0.0);
            for (std::size_t u = 0; u < nu; ++u)
                buf[u] = src[v * nu + u];
            fftw_execute_dft_r2c(fwd, buf.get(), spec.get());
            for (std::size_t j = 0; j < nf; ++j) {
                spec[j][0] *= resp[j];
                spec[j][1] *= resp[j];
            }
            fftw_execute_dft_c2r(inv, spec.get(), buf.get());
            for (std::size_t u = 0; u < nu; ++u)
                dst[v * nu + u] = static_cast<float>(buf[u] / static_cast<double>(n));
        }
    });
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
    return out;
}

/**
 * Filtered back projection for the parallel-beam geometry:
 * ramp-filter along u, back-project with the exact adjoint, scale by
 * pi / n_views times du / (sx * sy) (the adjoint weights by chord length,
 * which integrates over a voxel cross-section rather than sampling it).
 * Angular coverage is assumed to be [0, 180) degrees. With fewer than two
 * views the result is degenerate but still returned.
 */
inline volume fbp(const projection_stack& p, const projection_geometry& g, extent3 dims,
                  const fbp_config& cfg = {}, spacing3 sp = {}, unsigned workers = 0) {
    if (!(p.geometry() == g))
        throw dimension_error("fbp: stack does not match geometry");
    auto filtered = ramp_filter(p, cfg, workers);
    auto rec = matrix_free_projector(g, dims, sp, workers).adjoint(filtered);
    double scale = std::numbers::pi / static_cast<double>(g.n_views()) * g.du() / (sp.sx * sp.sy);
    for (auto& x : rec.data())
        x = static_cast<float>(x * scale);
    return rec;
}

// ---------------------------------------------------------------------------
// Projection-consistency optimization

enum class step_mode { power_iteration, fixed };

struct optimizer_config {
    std::size_t n_iterations = 10;
    step_mode mode = step_mode::power_iteration;
    double fixed_step = 0.0; ///< used when mode == fixed; must be > 0
    std::size_t power_iterations = 20;
};

inline void to_json(nlohmann::json& j, const optimizer_config& c) {
    j = nlohmann::json{{"n_iterations", c.n_iterations},
                       {"step_mode", c.mode == step_mode::fixed ? "fixed" : "power-iteration"},
                       {"fixed_step", c.fixed_step},
                       {"power_iterations", c.power_iterations}};
}
inline void from_json(const nlohmann::json& j, optimizer_config& c) {
    optimizer_config d;
    c.n_iterations = j.value("n_iterations", d.n_iterations);
    auto mode = j.value("step_mode", std::string("power-iteration"));
    if (mode == "fixed")
        c.mode = step_mode::fixed;
    else if (mode == "power-iteration")
        c.mode = step_mode::power_iteration;
    else
        throw invalid_argument("unknown step_mode '" + mode + "'");
    c.fixed_step = j.value("fixed_step", d.fixed_step);
    c.power_iterations = j.value("power_iterations", d.power_iterations);
}

/// residual[i] = ||A T_i - b||^2 with residual[0] at the initial volume;
/// step_size[i] is the step used to reach T_i (0 for i = 0).
struct optimizer_trace {
    std::vector<double> residual;
    std::vector<double> step_size;

    void write_csv(std::ostream& os) const {
        os << "iteration,residual,step_size\n";
        os.precision(17);
        for (std::size_t i = 0; i < residual.size(); ++i)
            os << i << ',' << residual[i] << ',' << step_size[i] << '\n';
    }
    std::string csv() const {
        std::ostringstream os;
        write_csv(os);
        return os.str();
    }
};

/// Optimizer failure; carries the iterations completed so far.
class optimizer_divergence : public numerical_error {
  public:
    optimizer_divergence(const std::string& what, optimizer_trace trace)
        : numerical_error(what), trace_(std::move(trace)) {}
    const optimizer_trace& trace() const { return trace_; }

  private:
    optimizer_trace trace_;
};

struct optimizer_result {
    volume T;
    optimizer_trace trace;
};

namespace detail {

// Sum of squares per view, then a fixed pairwise tree over views.
inline double squared_norm(const projection_stack& p) {
    std::vector<double> partial(p.n_views(), 0.0);
    for (std::size_t view = 0; view < p.n_views(); ++view) {
        double s = 0.0;
        for (float x : p.view(view))
            s += static_cast<double>(x) * x;
        partial[view] = s;
    }
    return pairwise_sum(partial);
}

inline double squared_norm(std::span<const double> xs, std::size_t block) {
    std::vector<double> partial((xs.size() + block - 1) / block, 0.0);
    for (std::size_t b = 0; b < partial.size(); ++b) {
        double s = 0.0;
        for (std::size_t i = b * block; i < std::min(xs.size(), (b + 1) * block); ++i)
            s += xs[i] * xs[i];
        partial[b] = s;
    }
    return pairwise_sum(partial);
}

inline projection_stack difference(const projection_stack& a, const projection_stack& b) {
    projection_stack d(a.geometry());
    for (std::size_t i = 0; i < d.size(); ++i)
        d[i] = a[i] - b[i];
    return d;
}

} // namespace detail

/**
 * Estimate sigma_max(A)^2 by power iteration on A^T A starting from the
 * normalized all-ones vector. The estimate approaches the true value from
 * below.
 */
template <projector P>
double estimate_operator_norm_sq(const P& op, std::size_t iterations = 20) {
    const extent3 dims = op.dims();
    const std::size_t n = dims.size();
    const std::size_t block = dims.nx * dims.ny;
    std::vector<double> x(n, 1.0 / std::sqrt(static_cast<double>(n)));
    volume xv(dims, op.spacing());
    double estimate = 0.0;
    for (std::size_t it = 0; it < std::max<std::size_t>(iterations, 1); ++it) {
        for (std::size_t i = 0; i < n; ++i)
            xv[i] = static_cast<float>(x[i]);
        auto y = op.adjoint(op.forward(xv));
        std::vector<double> yd(y.data().begin(), y.data().end());
        double norm = std::sqrt(detail::squared_norm(yd, block));
        if (!(norm > 0.0) || !std::isfinite(norm))
            return norm; // A is zero (or broken); caller decides
        estimate = norm;
        for (std::size_t i = 0; i < n; ++i)
            x[i] = yd[i] / norm;
    }
    return estimate;
}

/**
 * Minimize sum over views of ||A_d T - b_d||^2 by Landweber iteration
 *   T <- T - step * A^T (A T - b)
 * starting from `init`. In power-iteration mode step = 1 / sigma_max^2,
 * which keeps the residual non-increasing.
 *
 * Throws optimizer_divergence if the residual grows on two consecutive
 * iterations or becomes non-finite.
 */
template <projector P>
optimizer_result suppress_artifacts(const P& op, const projection_stack& target, volume init,
                                    const optimizer_config& cfg = {}) {
    if (cfg.n_iterations < 1)
        throw invalid_argument("optimizer: n_iterations must be >= 1");
    if (!(target.geometry() == op.geometry()))
        throw dimension_error("optimizer: target stack does not match projector geometry");
    if (init.dims() != op.dims())
        throw dimension_error("optimizer: initial volume does not match projector grid");

    double step = 0.0;
    if (cfg.mode == step_mode::fixed) {
        if (!(cfg.fixed_step > 0.0))
            throw invalid_argument("optimizer: fixed step must be > 0");
        step = cfg.fixed_step;
    } else {
        double norm_sq = estimate_operator_norm_sq(op, cfg.power_iterations);
        step = norm_sq > 0.0 ? 1.0 / norm_sq : 0.0;
    }

    volume T = std::move(init);
    T = volume(T.dims(), op.spacing(), volume_kind::intensity,
               std::vector<float>(T.data().begin(), T.data().end()));
    optimizer_trace trace;
    auto resid = detail::difference(op.forward(T), target);
    trace.residual.push_back(detail::squared_norm(resid));
    trace.step_size.push_back(0.0);
    if (!std::isfinite(trace.residual.back()))
        throw optimizer_divergence("optimizer: non-finite initial residual", trace);

    int growth = 0;
    for (std::size_t it = 0; it < cfg.n_iterations; ++it) {
        auto grad = op.adjoint(resid);
        for (std::size_t i = 0; i < T.size(); ++i)
            T[i] = static_cast<float>(static_cast<double>(T[i]) - step * grad[i]);
        resid = detail::difference(op.forward(T), target);
        double r = detail::squared_norm(resid);
        trace.residual.push_back(r);
        trace.step_size.push_back(step);
        if (!std::isfinite(r))
            throw optimizer_divergence("optimizer: residual became non-finite at iteration " +
                                           std::to_string(it + 1),
                                       trace);
        growth = r > trace.residual[trace.residual.size() - 2] ? growth + 1 : 0;
        if (growth >= 2)
            throw optimizer_divergence("optimizer: residual grew on two consecutive iterations", trace);
    }
    return {std::move(T), std::move(trace)};
}

// ---------------------------------------------------------------------------

enum class init_mode { ct, fbp };
enum class ct_scaling { min_max, none };

struct reconstruction_options {
    init_mode init = init_mode::ct;
    ct_scaling scaling = ct_scaling::min_max;
    unsigned workers = 0;
};

/**
 * Estimated vessel IPs -> optimized reconstruction T. T starts from the CT
 * volume (min-max scaled by default) or from fbp(x_hat), then runs the
 * projection-consistency optimization.
 */
inline optimizer_result reconstruct_pipeline(const projection_stack& x_hat, const projection_geometry& g,
                                             const volume& ct, const fbp_config& fbp_cfg,
                                             const optimizer_config& opt_cfg,
                                             const reconstruction_options& opts = {}) {
    matrix_free_projector op(g, ct.dims(), ct.spacing(), opts.workers);
    volume init;
    if (opts.init == init_mode::fbp)
        init = fbp(x_hat, g, ct.dims(), fbp_cfg, ct.spacing(), opts.workers);
    else if (opts.scaling == ct_scaling::min_max)
        init = normalize_min_max(ct);
    else
        init = volume(ct.dims(), ct.spacing(), volume_kind::intensity,
                      std::vector<float>(ct.data().begin(), ct.data().end()));
    return suppress_artifacts(op, x_hat, std::move(init), opt_cfg);
}

} // namespace topkmip
