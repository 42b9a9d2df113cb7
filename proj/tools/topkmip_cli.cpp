// Command-line front end: one binary, one subcommand per pipeline stage.
//
// Exit codes: 0 success, 1 usage error, 2 I/O or format error,
// 3 numerical failure (optimizer divergence).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <topkmip.hpp>

namespace {

using namespace topkmip;

enum exit_code { ok = 0, usage = 1, io = 2, numerical = 3 };

/// Options shared by several subcommands; flags win over --config.
struct common_options {
    std::string config_path;
    unsigned workers = 0;
    std::size_t views = 0;
    double angle_start = 0, angle_step = 0;
    std::vector<std::size_t> detector;
    std::vector<double> detector_spacing;
    CLI::Option *views_opt = nullptr, *start_opt = nullptr, *step_opt = nullptr, *det_opt = nullptr,
                *dsp_opt = nullptr, *workers_opt = nullptr;

    void add_to(CLI::App& app, bool geometry) {
        app.add_option("--config", config_path, "JSON config (pipeline layout; relevant sections are used)")
            ->check(CLI::ExistingFile);
        workers_opt = app.add_option("--workers", workers, "worker threads (0 = all cores)");
        if (!geometry)
            return;
        views_opt = app.add_option("--views", views, "number of views (default 180)");
        start_opt = app.add_option("--angle-start", angle_start, "first view angle in degrees");
        step_opt = app.add_option("--angle-step", angle_step, "angle increment in degrees");
        det_opt = app.add_option("--detector", detector, "detector columns and rows (nu nv)")->expected(2);
        dsp_opt = app.add_option("--detector-spacing", detector_spacing, "detector pixel pitch du dv (mm)")
                      ->expected(2);
    }

    pipeline_config load() const {
        pipeline_config cfg;
        if (!config_path.empty())
            merge_config(cfg, raw_io::read_json(config_path));
        if (workers_opt && workers_opt->count())
            cfg.workers = workers;
        if (views_opt && views_opt->count())
            cfg.geometry.n_views = views;
        if (start_opt && start_opt->count())
            cfg.geometry.angle_start_deg = angle_start;
        if (step_opt && step_opt->count())
            cfg.geometry.angle_step_deg = angle_step;
        if (det_opt && det_opt->count())
            cfg.geometry.detector = {detector[0], detector[1]};
        if (dsp_opt && dsp_opt->count())
            cfg.geometry.detector_spacing = {detector_spacing[0], detector_spacing[1]};
        return cfg;
    }
};

extent3 to_extent(const std::vector<std::size_t>& d) { return {d.at(0), d.at(1), d.at(2)}; }

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw io_error("cannot open '" + path + "' for writing");
    out << text;
}

std::string percent(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * x);
    return buf;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"topkmip: parallel-beam projections, top-k MIP, FBP and projection-consistency "
                 "reconstruction for vessel segmentation"};
    app.require_subcommand(1);

    // phantom ---------------------------------------------------------------
    auto* phantom_cmd = app.add_subcommand("phantom", "generate a vessel-tree mask and a CT-like volume");
    common_options phantom_common;
    phantom_common.add_to(*phantom_cmd, false);
    std::vector<std::size_t> ph_dims;
    std::uint64_t ph_seed = 0;
    std::size_t ph_depth = 0;
    double ph_noise = 0;
    std::string ph_mask, ph_ct, ph_graph;
    auto* ph_dims_opt = phantom_cmd->add_option("--dims", ph_dims, "nx ny nz")->expected(3);
    auto* ph_seed_opt = phantom_cmd->add_option("--seed", ph_seed, "RNG seed");
    auto* ph_depth_opt = phantom_cmd->add_option("--depth", ph_depth, "branching depth");
    auto* ph_noise_opt = phantom_cmd->add_option("--noise", ph_noise, "CT noise sigma");
    phantom_cmd->add_option("--mask", ph_mask, "output vessel mask (.vol)")->required();
    phantom_cmd->add_option("--ct", ph_ct, "output CT-like volume (.vol)");
    phantom_cmd->add_option("--graph", ph_graph, "output centerline graph (.json)");

    // project-ip ------------------------------------------------------------
    auto* ip_cmd = app.add_subcommand("project-ip", "integral projections of a volume");
    common_options ip_common;
    ip_common.add_to(*ip_cmd, true);
    std::string ip_in, ip_out, ip_pgm;
    ip_cmd->add_option("--in", ip_in, "input volume")->required()->check(CLI::ExistingFile);
    ip_cmd->add_option("--out", ip_out, "output stack")->required();
    ip_cmd->add_option("--pgm", ip_pgm, "also write view 0 as PGM");

    // project-topk ----------------------------------------------------------
    auto* topk_cmd = app.add_subcommand("project-topk", "top-k maximum intensity projections");
    common_options topk_common;
    topk_common.add_to(*topk_cmd, true);
    std::string topk_in, topk_out, topk_pgm, topk_norm;
    std::size_t topk_k = 0;
    topk_cmd->add_option("--in", topk_in, "input volume")->required()->check(CLI::ExistingFile);
    topk_cmd->add_option("--out", topk_out, "output top-k stack")->required();
    auto* topk_k_opt = topk_cmd->add_option("--k", topk_k, "number of maxima per ray (default 32)");
    auto* topk_norm_opt = topk_cmd->add_option("--normalize", topk_norm, "min-max | none (default min-max)")
                              ->check(CLI::IsMember({"min-max", "none"}));
    topk_cmd->add_option("--pgm", topk_pgm, "also write view 0, channel 0 as PGM");

    // fbp -------------------------------------------------------------------
    auto* fbp_cmd = app.add_subcommand("fbp", "filtered back projection of an IP stack");
    common_options fbp_common;
    fbp_common.add_to(*fbp_cmd, false);
    std::string fbp_in, fbp_out, fbp_filter_name;
    std::vector<std::size_t> fbp_dims;
    double fbp_cutoff = 1.0;
    fbp_cmd->add_option("--in", fbp_in, "input IP stack")->required()->check(CLI::ExistingFile);
    fbp_cmd->add_option("--out", fbp_out, "output volume")->required();
    fbp_cmd->add_option("--dims", fbp_dims, "nx ny nz (default nu nu nv)")->expected(3);
    auto* fbp_filter_opt = fbp_cmd->add_option("--filter", fbp_filter_name, "ram-lak | hann | none")
                               ->check(CLI::IsMember({"ram-lak", "hann", "none"}));
    auto* fbp_cutoff_opt = fbp_cmd->add_option("--cutoff", fbp_cutoff, "fraction of Nyquist in (0, 1]");

    // optimize --------------------------------------------------------------
    auto* opt_cmd = app.add_subcommand("optimize", "projection-consistency optimization (Landweber)");
    common_options opt_common;
    opt_common.add_to(*opt_cmd, false);
    std::string opt_target, opt_init, opt_out, opt_trace, opt_mode;
    std::size_t opt_iters = 0, opt_power = 0;
    double opt_step = 0;
    opt_cmd->add_option("--target", opt_target, "estimated IP stack")->required()->check(CLI::ExistingFile);
    opt_cmd->add_option("--init", opt_init, "initial volume (e.g. the CT)")->required()->check(CLI::ExistingFile);
    opt_cmd->add_option("--out", opt_out, "output volume")->required();
    opt_cmd->add_option("--trace", opt_trace, "residual trace CSV");
    auto* opt_iters_opt = opt_cmd->add_option("--iterations", opt_iters, "iterations (default 10)");
    auto* opt_mode_opt = opt_cmd->add_option("--step-mode", opt_mode, "power-iteration | fixed")
                             ->check(CLI::IsMember({"power-iteration", "fixed"}));
    auto* opt_step_opt = opt_cmd->add_option("--step", opt_step, "fixed step size");
    auto* opt_power_opt = opt_cmd->add_option("--power-iterations", opt_power, "power iterations (default 20)");
    bool opt_raw_init = false;
    opt_cmd->add_flag("--no-scale-init", opt_raw_init, "use the initial volume without min-max scaling");

    // segment ---------------------------------------------------------------
    auto* seg_cmd = app.add_subcommand("segment", "percentile threshold and component cleanup");
    common_options seg_common;
    seg_common.add_to(*seg_cmd, false);
    std::string seg_in, seg_out, seg_csv;
    double seg_p = 0;
    int seg_conn = 26;
    std::size_t seg_min = 0, seg_keep = 0;
    seg_cmd->add_option("--in", seg_in, "input volume")->required()->check(CLI::ExistingFile);
    seg_cmd->add_option("--out", seg_out, "output mask")->required();
    seg_cmd->add_option("--components", seg_csv, "component table CSV of the final mask");
    auto* seg_p_opt = seg_cmd->add_option("--percentile", seg_p, "threshold percentile (default 95)");
    auto* seg_conn_opt = seg_cmd->add_option("--connectivity", seg_conn, "6 | 18 | 26")
                             ->check(CLI::IsMember({6, 18, 26}));
    auto* seg_min_opt = seg_cmd->add_option("--min-size", seg_min, "minimum component size in voxels");
    auto* seg_keep_opt = seg_cmd->add_option("--keep-largest", seg_keep, "keep only the n largest components");

    // metrics ---------------------------------------------------------------
    auto* met_cmd = app.add_subcommand("metrics", "segmentation and image-quality metrics as JSON");
    std::string met_pred, met_gt, met_pred_stack, met_gt_stack, met_out;
    bool met_no_cldice = false;
    met_cmd->add_option("--pred", met_pred, "predicted mask")->required()->check(CLI::ExistingFile);
    met_cmd->add_option("--gt", met_gt, "ground-truth mask")->required()->check(CLI::ExistingFile);
    met_cmd->add_option("--pred-stack", met_pred_stack, "IP stack for PSNR/SSIM")->check(CLI::ExistingFile);
    met_cmd->add_option("--gt-stack", met_gt_stack, "reference IP stack for PSNR/SSIM")->check(CLI::ExistingFile);
    met_cmd->add_option("--out", met_out, "output JSON (default stdout)");
    met_cmd->add_flag("--no-cldice", met_no_cldice, "skip the skeleton-based clDice");

    // estimate --------------------------------------------------------------
    auto* est_cmd = app.add_subcommand("estimate", "run an IP estimator on a top-k stack");
    std::string est_cond, est_spec, est_out;
    est_cmd->add_option("--cond", est_cond, "top-k condition stack")->required()->check(CLI::ExistingFile);
    est_cmd->add_option("--estimator", est_spec, "spec string, e.g. oracle:gt=gt_ip.stk")->required();
    est_cmd->add_option("--out", est_out, "output IP stack")->required();

    // export ----------------------------------------------------------------
    auto* exp_cmd = app.add_subcommand("export", "write one view of a stack as an 8-bit PGM");
    std::string exp_in, exp_out;
    std::size_t exp_view = 0, exp_channel = 0;
    exp_cmd->add_option("--in", exp_in, "IP or top-k stack")->required()->check(CLI::ExistingFile);
    exp_cmd->add_option("--out", exp_out, "output PGM")->required();
    exp_cmd->add_option("--view", exp_view, "view index");
    exp_cmd->add_option("--channel", exp_channel, "top-k channel");

    // pipeline --------------------------------------------------------------
    auto* pipe_cmd = app.add_subcommand("pipeline", "end-to-end run with manifest");
    common_options pipe_common;
    pipe_common.add_to(*pipe_cmd, true);
    std::string pipe_out_dir, pipe_estimator, pipe_init;
    std::size_t pipe_k = 0, pipe_iters = 0;
    std::uint64_t pipe_seed = 0;
    auto* pipe_out_opt = pipe_cmd->add_option("--output-dir", pipe_out_dir, "directory for artefacts");
    auto* pipe_est_opt = pipe_cmd->add_option("--estimator", pipe_estimator, "estimator spec string");
    auto* pipe_k_opt = pipe_cmd->add_option("--k", pipe_k, "top-k depth");
    auto* pipe_iters_opt = pipe_cmd->add_option("--iterations", pipe_iters, "optimizer iterations");
    auto* pipe_seed_opt = pipe_cmd->add_option("--seed", pipe_seed, "master seed");
    auto* pipe_init_opt = pipe_cmd->add_option("--init", pipe_init, "ct | fbp")->check(CLI::IsMember({"ct", "fbp"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? ok : usage;
    }

    try {
        if (*phantom_cmd) {
            auto cfg = phantom_common.load();
            auto pc = cfg.phantom;
            if (ph_dims_opt->count())
                pc.dims = to_extent(ph_dims);
            if (ph_seed_opt->count())
                pc.seed = ph_seed;
            if (ph_depth_opt->count())
                pc.depth = ph_depth;
            if (ph_noise_opt->count())
                pc.noise_sigma = ph_noise;
            auto ph = generate_vessel_tree(pc);
            if (ph.clipped)
                std::cerr << "warning: vessel tree clipped at the volume border\n";
            save_volume(ph.mask, ph_mask);
            if (!ph_ct.empty())
                save_volume(generate_ct_like(ph.mask, pc), ph_ct);
            if (!ph_graph.empty()) {
                nlohmann::json g = ph.centerline;
                g["clipped"] = ph.clipped;
                raw_io::write_json(ph_graph, g);
            }
        } else if (*ip_cmd) {
            auto cfg = ip_common.load();
            auto vol = load_volume(ip_in);
            auto g = make_geometry(cfg.geometry, vol.dims());
            auto s = integral_projection(vol, g, cfg.workers);
            save_stack(s, ip_out);
            if (!ip_pgm.empty())
                export_image(s, 0, ip_pgm);
        } else if (*topk_cmd) {
            auto cfg = topk_common.load();
            if (topk_k_opt->count())
                cfg.k = topk_k;
            if (topk_norm_opt->count())
                cfg.normalize_condition = topk_norm == "min-max";
            if (cfg.k < 1)
                throw invalid_argument("--k must be >= 1");
            auto vol = load_volume(topk_in);
            if (cfg.normalize_condition)
                vol = normalize_min_max(vol);
            auto g = make_geometry(cfg.geometry, vol.dims());
            auto s = topk_mip(vol, g, cfg.k, cfg.workers);
            save_stack(s, topk_out);
            if (!topk_pgm.empty())
                export_image(s, 0, 0, topk_pgm);
        } else if (*fbp_cmd) {
            auto cfg = fbp_common.load();
            if (fbp_filter_opt->count())
                cfg.fbp.filter = fbp_filter_from_string(fbp_filter_name);
            if (fbp_cutoff_opt->count())
                cfg.fbp.cutoff = fbp_cutoff;
            auto s = load_projection_stack(fbp_in);
            extent3 dims = fbp_dims.empty() ? extent3{s.nu(), s.nu(), s.nv()} : to_extent(fbp_dims);
            if (s.n_views() < 2)
                std::cerr << "warning: FBP from fewer than two views is degenerate\n";
            save_volume(fbp(s, s.geometry(), dims, cfg.fbp, {}, cfg.workers), fbp_out);
        } else if (*opt_cmd) {
            auto cfg = opt_common.load();
            if (opt_iters_opt->count())
                cfg.optimizer.n_iterations = opt_iters;
            if (opt_mode_opt->count())
                cfg.optimizer.mode = opt_mode == "fixed" ? step_mode::fixed : step_mode::power_iteration;
            if (opt_step_opt->count())
                cfg.optimizer.fixed_step = opt_step;
            if (opt_power_opt->count())
                cfg.optimizer.power_iterations = opt_power;
            if (opt_raw_init)
                cfg.scaling = ct_scaling::none;
            auto target = load_projection_stack(opt_target);
            auto init = load_volume(opt_init);
            if (cfg.scaling == ct_scaling::min_max)
                init = normalize_min_max(init);
            matrix_free_projector op(target.geometry(), init.dims(), init.spacing(), cfg.workers);
            try {
                auto res = suppress_artifacts(op, target, init, cfg.optimizer);
                save_volume(res.T, opt_out);
                if (!opt_trace.empty())
                    write_text(opt_trace, res.trace.csv());
            } catch (const optimizer_divergence& e) {
                if (!opt_trace.empty())
                    write_text(opt_trace, e.trace().csv());
                throw;
            }
        } else if (*seg_cmd) {
            auto cfg = seg_common.load();
            auto vol = load_volume(seg_in);
            auto sc = cfg.segmentation;
            if (!cfg.segmentation_min_size_explicit)
                sc.min_component_size = scaled_min_component_size(vol.dims());
            if (seg_p_opt->count())
                sc.percentile = seg_p;
            if (seg_conn_opt->count())
                sc.conn = connectivity_from_int(seg_conn);
            if (seg_min_opt->count())
                sc.min_component_size = seg_min;
            if (seg_keep_opt->count())
                sc.keep_largest = seg_keep;
            if (!(sc.percentile > 0.0 && sc.percentile < 100.0))
                throw invalid_argument("--percentile must lie in (0, 100)");
            auto mask = segment(vol, sc);
            save_volume(mask, seg_out);
            if (!seg_csv.empty()) {
                std::ofstream out(seg_csv, std::ios::trunc);
                if (!out)
                    throw io_error("cannot open '" + seg_csv + "'");
                connected_components(mask, sc.conn).write_csv(out);
            }
        } else if (*met_cmd) {
            auto pred = load_volume(met_pred);
            auto gt = load_volume(met_gt);
            if (!pred.is_mask() || !gt.is_mask())
                throw format_error("metrics: --pred and --gt must be binary masks");
            auto rep = met_no_cldice ? segmentation_metrics(pred, gt) : evaluate_segmentation(pred, gt);
            nlohmann::json j = rep;
            if (met_pred_stack.empty() != met_gt_stack.empty())
                throw invalid_argument("give both --pred-stack and --gt-stack");
            std::string psnr_text;
            if (!met_pred_stack.empty()) {
                auto q = image_quality(load_projection_stack(met_pred_stack), load_projection_stack(met_gt_stack));
                j["psnr"] = encode_db(q.psnr);
                j["ssim"] = q.ssim;
            }
            write_text(met_out, j.dump(2) + "\n");
            std::cerr << "DSC " << percent(rep.dsc) << "%  clDice "
                      << (rep.cldice ? percent(*rep.cldice) + "%" : std::string("n/a")) << "  IoU "
                      << percent(rep.iou) << "%  Sen " << percent(rep.sensitivity) << "%  Spe "
                      << percent(rep.specificity) << "%\n";
        } else if (*est_cmd) {
            run_estimator_from_files(est_cond, est_spec, est_out);
        } else if (*exp_cmd) {
            auto h = raw_io::read_json(raw_io::header_path(exp_in));
            if (h.contains("k"))
                export_image(load_topk_stack(exp_in), exp_view, exp_channel, exp_out);
            else
                export_image(load_projection_stack(exp_in), exp_view, exp_out);
        } else if (*pipe_cmd) {
            auto cfg = pipe_common.load();
            if (pipe_out_opt->count())
                cfg.output_dir = pipe_out_dir;
            if (pipe_est_opt->count())
                cfg.estimator = pipe_estimator;
            if (pipe_k_opt->count())
                cfg.k = pipe_k;
            if (pipe_iters_opt->count())
                cfg.optimizer.n_iterations = pipe_iters;
            if (pipe_seed_opt->count()) {
                cfg.seed = pipe_seed;
                cfg.phantom.seed = pipe_seed;
            }
            if (pipe_init_opt->count())
                cfg.init = pipe_init == "fbp" ? init_mode::fbp : init_mode::ct;
            auto res = run_pipeline(cfg);
            std::cout << res.manifest.dump(2) << "\n";
        }
    } catch (const optimizer_divergence& e) {
        std::cerr << "error: " << e.what() << "\n";
        return numerical;
    } catch (const numerical_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return numerical;
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return io;
    } catch (const format_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return io;
    } catch (const invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return usage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return io;
    }
    return ok;
}
