#include <catch2/catch_amalgamated.hpp>

#include "test_support.hpp"

using namespace topkmip;

namespace {

pipeline_config small_config() {
    pipeline_config c;
    c.phantom.dims = {24, 24, 24};
    c.phantom.root_radius = 3.0;
    c.geometry.n_views = 30;
    c.geometry.angle_step_deg = 6;
    c.k = 8;
    return c;
}

} // namespace

TEST_CASE("config hash tracks result-relevant fields only", "[pipeline]") {
    auto base = small_config();
    auto h = config_hash(base);
    CHECK(h.size() == 16);
    CHECK(config_hash(base) == h);

    auto c = base;
    c.output_dir = "/somewhere/else";
    c.workers = 7;
    CHECK(config_hash(c) == h);

    std::vector<std::function<void(pipeline_config&)>> edits{
        [](pipeline_config& x) { x.k = 9; },
        [](pipeline_config& x) { x.estimator = "noisy-oracle:sigma=1"; },
        [](pipeline_config& x) { x.phantom.seed = 2; },
        [](pipeline_config& x) { x.geometry.n_views = 31; },
        [](pipeline_config& x) { x.optimizer.n_iterations = 11; },
        [](pipeline_config& x) { x.segmentation.percentile = 90; },
        [](pipeline_config& x) { x.init = init_mode::fbp; },
        [](pipeline_config& x) { x.fbp.cutoff = 0.5; },
        [](pipeline_config& x) { x.ct_path = "ct.vol"; },
    };
    for (auto& edit : edits) {
        auto e = base;
        edit(e);
        CHECK(config_hash(e) != h);
    }
}

TEST_CASE("merge_config overlays sections", "[pipeline]") {
    pipeline_config c;
    merge_config(c, nlohmann::json::parse(R"({
        "seed": 9,
        "phantom": {"depth": 2},
        "geometry": {"n_views": 90, "angle_step_deg": 2},
        "k": 4,
        "optimizer": {"n_iterations": 3},
        "segmentation": {"min_component_size": 5},
        "init": "fbp",
        "paths": {"output_dir": "out"}
    })"));
    CHECK(c.seed == 9);
    CHECK(c.phantom.seed == 9);
    CHECK(c.phantom.depth == 2);
    CHECK(c.phantom.dims == extent3{64, 64, 64});
    CHECK(c.geometry.n_views == 90);
    CHECK(c.geometry.angle_step_deg == 2);
    CHECK(c.k == 4);
    CHECK(c.optimizer.n_iterations == 3);
    CHECK(c.optimizer.power_iterations == 20);
    CHECK(c.segmentation.min_component_size == 5);
    CHECK(c.segmentation_min_size_explicit);
    CHECK(c.init == init_mode::fbp);
    CHECK(c.output_dir == "out");

    CHECK_THROWS_AS(merge_config(c, nlohmann::json::parse(R"({"init": "zero"})")), invalid_argument);
    CHECK_THROWS_AS(merge_config(c, nlohmann::json::parse(R"({"k": "many"})")), format_error);
    CHECK_THROWS_AS(merge_config(c, nlohmann::json::parse(R"({"k": 0, "seed": 3})")), invalid_argument);
    CHECK(c.k == 4);
    CHECK(c.seed == 9);

    pipeline_config round;
    merge_config(round, to_json(c));
    CHECK(config_hash(round) == config_hash(c));
}

TEST_CASE("small pipeline run writes a manifest", "[pipeline]") {
    auto dir = testing::scratch_dir("pipeline_run");
    auto cfg = small_config();
    cfg.output_dir = dir.string();
    auto r = run_pipeline(cfg);

    CHECK(r.report.dsc > 0.5);
    CHECK(r.report.cldice.has_value());
    CHECK(r.after.psnr > r.before.psnr);
    REQUIRE(r.trace.residual.size() == cfg.optimizer.n_iterations + 1);
    for (std::size_t i = 1; i < r.trace.residual.size(); ++i)
        CHECK(r.trace.residual[i] <= r.trace.residual[i - 1]);

    auto m = raw_io::read_json(dir / "manifest.json");
    CHECK(m["config_hash"] == config_hash(cfg));
    CHECK(m["metrics"]["dsc"].get<double>() == r.report.dsc);
    for (const char* stage : {"inputs", "condition_topk", "ground_truth_ip", "estimate", "initialize", "optimize",
                              "segment", "metrics"})
        CHECK(m["timings_s"].contains(stage));
    CHECK(m["throughput"]["rays_per_s"].get<double>() > 0);
    CHECK(m["residual"].size() == r.trace.residual.size());
    CHECK(m["reprojection"]["after"]["ssim"].get<double>() == r.after.ssim);
    for (const char* f : {"ct.vol", "gt.vol", "reconstruction.vol", "segmentation.vol", "condition.topk",
                          "gt_ip.stk", "estimated_ip.stk", "trace.csv", "gt_ip_view0.pgm"})
        CHECK(std::filesystem::exists(dir / f));
    CHECK(load_volume(dir / "segmentation.vol") == r.segmentation);
    CHECK(load_topk_stack(dir / "condition.topk").k() == 8);
}

TEST_CASE("pipeline from files and worker consistency", "[pipeline]") {
    auto dir = testing::scratch_dir("pipeline_files");
    auto cfg = small_config();
    auto ph = generate_vessel_tree(cfg.phantom);
    save_volume(ph.mask, dir / "gt.vol");
    save_volume(generate_ct_like(ph.mask, cfg.phantom), dir / "ct.vol");
    auto from_files = cfg;
    from_files.ct_path = (dir / "ct.vol").string();
    from_files.gt_path = (dir / "gt.vol").string();
    from_files.workers = 1;
    auto a = run_pipeline(from_files);
    auto generated = run_pipeline(cfg);
    CHECK(a.segmentation == generated.segmentation);
    CHECK(a.manifest["inputs"]["ct"] == from_files.ct_path);

    from_files.workers = 3;
    auto b = run_pipeline(from_files);
    CHECK(b.condition == a.condition);
    CHECK(b.segmentation == a.segmentation);

    auto half = cfg;
    half.gt_path = "x.vol";
    CHECK_THROWS_AS(run_pipeline(half), invalid_argument);
}
