#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "estimator.hpp"
#include "geometry.hpp"
#include "metrics.hpp"
#include "phantom.hpp"
#include "postprocess.hpp"
#include "projection.hpp"
#include "reconstruction.hpp"
#include "volume.hpp"

namespace topkmip {

/// Everything `pipeline` needs. Empty ct/gt paths mean "generate a phantom".
struct pipeline_config {
    std::string ct_path, gt_path, output_dir;
    phantom_config phantom;
    geometry_config geometry;
    std::size_t k = 32;
    std::string estimator = "oracle";
    fbp_config fbp;
    optimizer_config optimizer;
    segmentation_config segmentation;
    bool segmentation_min_size_explicit = false;
    init_mode init = init_mode::ct;
    ct_scaling scaling = ct_scaling::min_max;
    bool normalize_condition = true;
    std::uint64_t seed = 1;
    unsigned workers = 0;
};

inline nlohmann::json to_json(const pipeline_config& c) {
    return nlohmann::json{
        {"paths", {{"ct", c.ct_path}, {"gt", c.gt_path}, {"output_dir", c.output_dir}}},
        {"phantom", c.phantom},
        {"geometry", c.geometry},
        {"k", c.k},
        {"estimator", c.estimator},
        {"fbp", c.fbp},
        {"optimizer", c.optimizer},
        {"segmentation", c.segmentation},
        {"init", c.init == init_mode::fbp ? "fbp" : "ct"},
        {"ct_scaling", c.scaling == ct_scaling::none ? "none" : "min-max"},
        {"condition_normalization", c.normalize_condition ? "min-max" : "none"},
        {"seed", c.seed},
        {"workers", c.workers}};
}

/// Fields missing from `j` keep the values already in `c`. On error `c` is unchanged.
inline void merge_config(pipeline_config& out, const nlohmann::json& j) {
    pipeline_config c = out;
    try {
        if (j.contains("seed")) {
            c.seed = j.at("seed").get<std::uint64_t>();
            c.phantom.seed = c.seed;
        }
        if (j.contains("paths")) {
            const auto& p = j.at("paths");
            c.ct_path = p.value("ct", c.ct_path);
            c.gt_path = p.value("gt", c.gt_path);
            c.output_dir = p.value("output_dir", c.output_dir);
        }
        if (j.contains("phantom")) {
            nlohmann::json merged = c.phantom;
            merged.merge_patch(j.at("phantom"));
            c.phantom = merged.get<phantom_config>();
        }
        if (j.contains("geometry")) {
            nlohmann::json merged = c.geometry;
            merged.merge_patch(j.at("geometry"));
            c.geometry = merged.get<geometry_config>();
        }
        c.k = j.value("k", c.k);
        c.estimator = j.value("estimator", c.estimator);
        if (j.contains("fbp")) {
            nlohmann::json merged = c.fbp;
            merged.merge_patch(j.at("fbp"));
            c.fbp = merged.get<fbp_config>();
        }
        if (j.contains("optimizer")) {
            nlohmann::json merged = c.optimizer;
            merged.merge_patch(j.at("optimizer"));
            c.optimizer = merged.get<optimizer_config>();
        }
        if (j.contains("segmentation")) {
            nlohmann::json merged = c.segmentation;
            merged.merge_patch(j.at("segmentation"));
            c.segmentation = merged.get<segmentation_config>();
            if (j.at("segmentation").contains("min_component_size"))
                c.segmentation_min_size_explicit = true;
        }
        if (j.contains("init")) {
            auto s = j.at("init").get<std::string>();
            if (s != "ct" && s != "fbp")
                throw invalid_argument("init must be 'ct' or 'fbp'");
            c.init = s == "fbp" ? init_mode::fbp : init_mode::ct;
        }
        if (j.contains("ct_scaling")) {
            auto s = j.at("ct_scaling").get<std::string>();
            if (s != "min-max" && s != "none")
                throw invalid_argument("ct_scaling must be 'min-max' or 'none'");
            c.scaling = s == "none" ? ct_scaling::none : ct_scaling::min_max;
        }
        if (j.contains("condition_normalization")) {
            auto s = j.at("condition_normalization").get<std::string>();
            if (s != "min-max" && s != "none")
                throw invalid_argument("condition_normalization must be 'min-max' or 'none'");
            c.normalize_condition = s == "min-max";
        }
        c.workers = j.value("workers", c.workers);
    } catch (const nlohmann::json::exception& e) {
        throw format_error(std::string("bad pipeline config: ") + e.what());
    }
    if (c.k < 1)
        throw invalid_argument("k must be >= 1");
    out = std::move(c);
}

/**
 * 64-bit FNV-1a over the canonical (sorted-key) dump of the config with the
 * fields that cannot change results removed: output_dir and workers.
 */
inline std::string config_hash(const pipeline_config& c) {
    auto j = to_json(c);
    j["paths"].erase("output_dir");
    j.erase("workers");
    std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct stage_timing {
    std::string stage;
    double seconds;
};

struct pipeline_result {
    volume ct, gt, reconstruction, segmentation;
    projection_stack gt_ip, estimated_ip;
    topk_stack condition;
    optimizer_trace trace;
    segmentation_report report;
    image_quality_report before, after; ///< A*T_init and A*T_opt vs ground-truth IPs
    std::vector<stage_timing> timings;
    nlohmann::json manifest;
};

/**
 * Phantom (or loaded CT + vessel mask) -> top-k MIP condition -> estimator
 * -> projection-consistency optimization -> percentile threshold ->
 * component cleanup -> metrics. Writes artefacts and manifest.json when
 * output_dir is set.
 */
inline pipeline_result run_pipeline(const pipeline_config& cfg) {
    using clock = std::chrono::steady_clock;
    pipeline_result r;
    auto timed = [&](const std::string& name, auto&& fn) {
        auto t0 = clock::now();
        fn();
        r.timings.push_back({name, std::chrono::duration<double>(clock::now() - t0).count()});
    };

    bool clipped = false;
    timed("inputs", [&] {
        if (cfg.ct_path.empty() != cfg.gt_path.empty())
            throw invalid_argument("pipeline: give both ct and gt paths, or neither");
        if (cfg.ct_path.empty()) {
            auto ph = generate_vessel_tree(cfg.phantom);
            clipped = ph.clipped;
            r.gt = std::move(ph.mask);
            r.ct = generate_ct_like(r.gt, cfg.phantom);
        } else {
            r.ct = load_volume(cfg.ct_path);
            r.gt = load_volume(cfg.gt_path);
            if (!r.gt.is_mask())
                throw format_error("pipeline: ground truth must be a binary mask");
            if (r.gt.dims() != r.ct.dims())
                throw dimension_error("pipeline: CT and ground truth dims differ");
        }
    });
    const auto geom = make_geometry(cfg.geometry, r.ct.dims());

    timed("condition_topk", [&] {
        volume src = cfg.normalize_condition ? normalize_min_max(r.ct) : r.ct;
        r.condition = topk_mip(src, geom, cfg.k, cfg.workers);
    });
    timed("ground_truth_ip", [&] { r.gt_ip = integral_projection(r.gt, geom, cfg.workers); });
    timed("estimate", [&] {
        auto spec = parse_estimator_spec(cfg.estimator);
        if (spec.name == "noisy-oracle" && !spec.has("seed"))
            spec.params["seed"] = std::to_string(cfg.seed);
        spec.params.erase("gt");
        auto est = make_estimator(spec, &r.condition, &r.gt_ip);
        r.estimated_ip = checked_estimate(*est, r.condition, &r.gt_ip);
    });

    matrix_free_projector op(geom, r.ct.dims(), r.ct.spacing(), cfg.workers);
    volume init;
    timed("initialize", [&] {
        if (cfg.init == init_mode::fbp)
            init = fbp(r.estimated_ip, geom, r.ct.dims(), cfg.fbp, r.ct.spacing(), cfg.workers);
        else
            init = cfg.scaling == ct_scaling::min_max ? normalize_min_max(r.ct) : r.ct;
    });
    timed("optimize", [&] {
        r.before = image_quality(op.forward(init), r.gt_ip);
        auto res = suppress_artifacts(op, r.estimated_ip, init, cfg.optimizer);
        r.reconstruction = std::move(res.T);
        r.trace = std::move(res.trace);
        r.after = image_quality(op.forward(r.reconstruction), r.gt_ip);
    });
    timed("segment", [&] {
        auto seg = cfg.segmentation;
        if (!cfg.segmentation_min_size_explicit)
            seg.min_component_size = scaled_min_component_size(r.ct.dims());
        r.segmentation = segment(r.reconstruction, seg);
    });
    timed("metrics", [&] { r.report = evaluate_segmentation(r.segmentation, r.gt); });

    // Forward + adjoint per iteration, plus power iteration and the two re-projections.
    double optimize_s = 0.0;
    for (const auto& t : r.timings)
        if (t.stage == "optimize")
            optimize_s = t.seconds;
    double projector_calls = 2.0 * (static_cast<double>(cfg.optimizer.n_iterations) +
                                     (cfg.optimizer.mode == step_mode::power_iteration
                                          ? static_cast<double>(cfg.optimizer.power_iterations)
                                          : 0.0)) +
                             3.0;
    double rays = projector_calls * static_cast<double>(geom.n_rays());

    auto& m = r.manifest;
    m["config"] = to_json(cfg);
    m["config_hash"] = config_hash(cfg);
    m["inputs"] = {{"ct", cfg.ct_path.empty() ? "phantom" : cfg.ct_path},
                   {"gt", cfg.gt_path.empty() ? "phantom" : cfg.gt_path},
                   {"dims", {r.ct.dims().nx, r.ct.dims().ny, r.ct.dims().nz}},
                   {"phantom_clipped", clipped}};
    m["geometry"] = geom;
    for (const auto& t : r.timings)
        m["timings_s"][t.stage] = t.seconds;
    m["throughput"] = {{"rays_per_s", optimize_s > 0 ? rays / optimize_s : 0.0},
                       {"views_per_s", optimize_s > 0 ? projector_calls * geom.n_views() / optimize_s : 0.0}};
    m["metrics"] = r.report;
    m["reprojection"] = {{"before", r.before}, {"after", r.after}};
    m["residual"] = r.trace.residual;

    if (!cfg.output_dir.empty()) {
        std::filesystem::path dir(cfg.output_dir);
        std::filesystem::create_directories(dir);
        save_volume(r.ct, dir / "ct.vol");
        save_volume(r.gt, dir / "gt.vol");
        save_volume(r.reconstruction, dir / "reconstruction.vol");
        save_volume(r.segmentation, dir / "segmentation.vol");
        save_stack(r.condition, dir / "condition.topk");
        save_stack(r.gt_ip, dir / "gt_ip.stk");
        save_stack(r.estimated_ip, dir / "estimated_ip.stk");
        std::ofstream(dir / "trace.csv") << r.trace.csv();
        export_image(r.gt_ip, 0, dir / "gt_ip_view0.pgm");
        export_image(r.condition, 0, 0, dir / "condition_view0_ch0.pgm");
        export_image(op.forward(r.reconstruction), 0, dir / "reprojection_view0.pgm");
        raw_io::write_json(dir / "manifest.json", m);
    }
    return r;
}

} // namespace topkmip
