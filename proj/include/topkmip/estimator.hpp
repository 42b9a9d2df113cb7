#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "error.hpp"
#include "projection.hpp"
#include "rng.hpp"
#include "stack.hpp"

namespace topkmip {

struct estimator_capabilities {
    bool deterministic = true;
    bool requires_ground_truth = false;
    bool view_independent = true;
};

/**
 * Maps a top-k MIP condition stack to estimated vessel integral projections.
 * A trained generative model plugs in here; the shipped implementations are
 * reference baselines. Outputs must share the condition's geometry and be
 * non-negative (see checked_estimate).
 */
class ip_estimator {
  public:
    virtual ~ip_estimator() = default;
    virtual std::string name() const = 0;
    virtual estimator_capabilities capabilities() const = 0;
    /// `truth` is the ground-truth IP stack for estimators that need one.
    virtual projection_stack estimate(const topk_stack& cond, const projection_stack* truth) const = 0;
};

namespace detail {

inline const projection_stack& require_truth(const std::string& who, const topk_stack& cond,
                                             const projection_stack* truth) {
    if (!truth)
        throw invalid_argument(who + " estimator needs a ground-truth stack (gt=<path>)");
    if (!(truth->geometry() == cond.geometry()))
        throw dimension_error(who + " estimator: ground truth geometry differs from condition");
    return *truth;
}

} // namespace detail

/// Returns the ground truth unchanged.
class oracle_estimator final : public ip_estimator {
  public:
    std::string name() const override { return "oracle"; }
    estimator_capabilities capabilities() const override { return {true, true, true}; }
    projection_stack estimate(const topk_stack& cond, const projection_stack* truth) const override {
        return detail::require_truth(name(), cond, truth);
    }
};

/// Ground truth plus N(0, sigma^2) noise, clipped at zero. Noise is drawn
/// from splitmix64(seed) in pixel order.
class noisy_oracle_estimator final : public ip_estimator {
  public:
    noisy_oracle_estimator(double sigma, std::uint64_t seed) : sigma_(sigma), seed_(seed) {
        if (!(sigma >= 0.0))
            throw invalid_argument("noisy-oracle: sigma must be >= 0");
    }
    std::string name() const override { return "noisy-oracle"; }
    estimator_capabilities capabilities() const override { return {true, true, true}; }
    double sigma() const { return sigma_; }

    projection_stack estimate(const topk_stack& cond, const projection_stack* truth) const override {
        const auto& gt = detail::require_truth(name(), cond, truth);
        if (sigma_ == 0.0)
            return gt;
        splitmix64 rng(seed_);
        projection_stack out(gt.geometry());
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = static_cast<float>(std::max(0.0, gt[i] + sigma_ * rng.normal()));
        return out;
    }

  private:
    double sigma_;
    std::uint64_t seed_;
};

/// alpha * (sum of the k channels) per pixel.
class topk_sum_estimator final : public ip_estimator {
  public:
    explicit topk_sum_estimator(double alpha = 1.0) : alpha_(alpha) {
        if (!(alpha >= 0.0))
            throw invalid_argument("topk-sum: alpha must be >= 0");
    }
    std::string name() const override { return "topk-sum"; }
    estimator_capabilities capabilities() const override { return {true, false, true}; }
    double alpha() const { return alpha_; }

    projection_stack estimate(const topk_stack& cond, const projection_stack*) const override {
        auto out = topk_channel_sum(cond);
        for (auto& x : out.data())
            x = static_cast<float>(alpha_ * x);
        return out;
    }

  private:
    double alpha_;
};

/// Least-squares alpha for topk_sum_estimator: <s, gt> / <s, s>, clamped at 0.
inline double fit_topk_sum_alpha(const topk_stack& cond, const projection_stack& gt) {
    if (!(gt.geometry() == cond.geometry()))
        throw dimension_error("fit_topk_sum_alpha: geometry mismatch");
    auto s = topk_channel_sum(cond);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        num += static_cast<double>(s[i]) * gt[i];
        den += static_cast<double>(s[i]) * s[i];
    }
    return den > 0.0 ? std::max(0.0, num / den) : 0.0;
}

/// Runs the estimator and enforces the output contract.
inline projection_stack checked_estimate(const ip_estimator& est, const topk_stack& cond,
                                         const projection_stack* truth = nullptr) {
    auto out = est.estimate(cond, truth);
    if (!(out.geometry() == cond.geometry()))
        throw error("estimator '" + est.name() + "' returned a stack with the wrong geometry");
    for (float x : out.data())
        if (!(x >= 0.0f))
            throw error("estimator '" + est.name() + "' returned a negative or NaN value");
    return out;
}

/// Parsed `name(:key=value(,key=value)*)?`. Values may not contain ','.
struct estimator_spec {
    std::string name;
    std::map<std::string, std::string> params;

    bool has(const std::string& k) const { return params.count(k) != 0; }
    double number(const std::string& k, double fallback) const {
        auto it = params.find(k);
        if (it == params.end())
            return fallback;
        try {
            std::size_t used = 0;
            double v = std::stod(it->second, &used);
            if (used != it->second.size())
                throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw invalid_argument("estimator parameter '" + k + "' is not a number: '" + it->second + "'");
        }
    }
};

inline estimator_spec parse_estimator_spec(const std::string& text) {
    estimator_spec spec;
    auto colon = text.find(':');
    spec.name = text.substr(0, colon);
    if (spec.name.empty())
        throw invalid_argument("empty estimator name in '" + text + "'");
    if (colon == std::string::npos)
        return spec;
    std::string rest = text.substr(colon + 1);
    std::size_t pos = 0;
    while (pos <= rest.size()) {
        auto comma = rest.find(',', pos);
        std::string item = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0)
            throw invalid_argument("malformed estimator parameter '" + item + "' in '" + text + "'");
        spec.params[item.substr(0, eq)] = item.substr(eq + 1);
        if (comma == std::string::npos)
            break;
        pos = comma + 1;
    }
    return spec;
}

/**
 * Build an estimator from a spec string:
 *   oracle                       ground truth verbatim
 *   noisy-oracle:sigma=S,seed=N  absolute sigma; or sigma_rel=F for F * max(gt)
 *   topk-sum:alpha=A             alpha defaults to 1, or is fitted when fit=1
 * The `gt=<path>` key names the ground-truth stack and is handled by the
 * caller. `truth` is needed for sigma_rel and fit.
 */
inline std::unique_ptr<ip_estimator> make_estimator(const estimator_spec& spec, const topk_stack* cond = nullptr,
                                                    const projection_stack* truth = nullptr) {
    auto allow = [&](std::initializer_list<const char*> keys) {
        for (const auto& [k, v] : spec.params)
            if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
                throw invalid_argument("estimator '" + spec.name + "' has no parameter '" + k + "'");
    };
    if (spec.name == "oracle") {
        allow({"gt"});
        return std::make_unique<oracle_estimator>();
    }
    if (spec.name == "noisy-oracle") {
        allow({"gt", "sigma", "sigma_rel", "seed"});
        double sigma = spec.number("sigma", 0.0);
        if (spec.has("sigma_rel")) {
            if (!truth)
                throw invalid_argument("noisy-oracle: sigma_rel needs a ground-truth stack");
            double mx = truth->size() ? *std::max_element(truth->data().begin(), truth->data().end()) : 0.0;
            sigma = spec.number("sigma_rel", 0.0) * mx;
        }
        double seed = spec.number("seed", 0.0);
        if (seed < 0 || seed != std::floor(seed))
            throw invalid_argument("noisy-oracle: seed must be a non-negative integer");
        return std::make_unique<noisy_oracle_estimator>(sigma, static_cast<std::uint64_t>(seed));
    }
    if (spec.name == "topk-sum") {
        allow({"gt", "alpha", "fit"});
        if (spec.number("fit", 0.0) != 0.0) {
            if (!truth || !cond)
                throw invalid_argument("topk-sum: fit=1 needs the condition and a ground-truth stack");
            return std::make_unique<topk_sum_estimator>(fit_topk_sum_alpha(*cond, *truth));
        }
        return std::make_unique<topk_sum_estimator>(spec.number("alpha", 1.0));
    }
    throw invalid_argument("unknown estimator '" + spec.name + "'");
}

/// File boundary: read a top-k stack, run the named estimator, write IPs.
inline void run_estimator_from_files(const std::filesystem::path& cond_path, const std::string& spec_text,
                                     const std::filesystem::path& out_path) {
    auto spec = parse_estimator_spec(spec_text);
    auto cond = load_topk_stack(cond_path);
    std::optional<projection_stack> truth;
    if (spec.has("gt"))
        truth = load_projection_stack(spec.params.at("gt"));
    auto est = make_estimator(spec, &cond, truth ? &*truth : nullptr);
    save_stack(checked_estimate(*est, cond, truth ? &*truth : nullptr), out_path);
}

} // namespace topkmip
