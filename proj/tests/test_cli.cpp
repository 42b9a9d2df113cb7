#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sys/wait.h>

#include "test_support.hpp"

using namespace topkmip;

namespace {

struct outcome {
    int code;
    std::string out;
};

outcome run(const std::string& args, const std::filesystem::path& dir) {
    auto out = dir / "stdout.txt";
    std::string cmd = std::string(TOPKMIP_CLI) + " " + args + " > " + out.string() + " 2> " +
                      (dir / "stderr.txt").string();
    int status = std::system(cmd.c_str());
    std::ifstream in(out);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1,
            std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>())};
}

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("phantom, projection and metrics commands", "[cli]") {
    auto dir = testing::scratch_dir("cli_basic");
    auto d = dir.string();
    REQUIRE(run("phantom --dims 24 24 24 --seed 3 --mask " + d + "/m.vol --ct " + d + "/ct.vol --graph " + d +
                    "/g.json",
                dir)
                .code == 0);
    CHECK(load_volume(dir / "m.vol").is_mask());
    CHECK(raw_io::read_json(dir / "g.json").contains("edges"));

    auto met = run("metrics --pred " + d + "/m.vol --gt " + d + "/m.vol", dir);
    REQUIRE(met.code == 0);
    auto j = nlohmann::json::parse(met.out);
    CHECK(j["dsc"] == 1.0);
    CHECK(j["cldice"] == 1.0);

    REQUIRE(run("project-topk --in " + d + "/ct.vol --out " + d + "/a.topk --k 1 --views 20 --angle-step 9", dir)
                .code == 0);
    REQUIRE(run("project-topk --in " + d + "/ct.vol --out " + d + "/b.topk --k 1 --views 20 --angle-step 9 "
                "--workers 3",
                dir)
                .code == 0);
    CHECK(slurp(dir / "a.topk") == slurp(dir / "b.topk"));
    CHECK(load_topk_stack(dir / "a.topk").n_views() == 20);

    REQUIRE(run("project-ip --in " + d + "/m.vol --out " + d + "/ip.stk --views 20 --angle-step 9", dir).code == 0);
    REQUIRE(run("estimate --cond " + d + "/a.topk --estimator oracle:gt=" + d + "/ip.stk --out " + d + "/est.stk",
                dir)
                .code == 0);
    CHECK(slurp(dir / "est.stk") == slurp(dir / "ip.stk"));
    REQUIRE(run("fbp --in " + d + "/ip.stk --out " + d + "/fbp.vol --dims 24 24 24", dir)
                .code == 0);
    REQUIRE(run("optimize --target " + d + "/ip.stk --init " + d + "/ct.vol --out " + d + "/t.vol --trace " + d +
                    "/trace.csv",
                dir)
                .code == 0);
    REQUIRE(run("segment --in " + d + "/t.vol --out " + d + "/seg.vol --components " + d + "/c.csv", dir).code == 0);
    auto met2 = run("metrics --pred " + d + "/seg.vol --gt " + d + "/m.vol --pred-stack " + d + "/est.stk --gt-stack " +
                        d + "/ip.stk",
                    dir);
    REQUIRE(met2.code == 0);
    auto j2 = nlohmann::json::parse(met2.out);
    CHECK(j2["psnr"] == "inf");
    for (const char* key : {"dsc", "cldice", "iou", "sen", "spe", "ssim"})
        CHECK(j2.contains(key));
    CHECK(j2["dsc"].get<double>() > 0.0);
    CHECK(j2["dsc"].get<double>() <= 1.0);
    REQUIRE(run("export --in " + d + "/a.topk --out " + d + "/v.pgm --view 2", dir).code == 0);
    CHECK(std::filesystem::file_size(dir / "v.pgm") > 24 * 24);
}

TEST_CASE("exit codes", "[cli]") {
    auto dir = testing::scratch_dir("cli_errors");
    auto d = dir.string();
    CHECK(run("", dir).code == 1);
    CHECK(run("no-such-command", dir).code == 1);
    CHECK(run("phantom", dir).code == 1);
    CHECK(run("phantom --dims 0 4 4 --mask " + d + "/m.vol", dir).code == 1);
    std::ofstream(dir / "bad.vol", std::ios::binary) << "xyz";
    std::ofstream(dir / "bad.vol.json") << R"({"dims":[2,2,2],"kind":"mask","dtype":"f32","order":"little"})";
    CHECK(run("segment --in " + d + "/bad.vol --out " + d + "/o.vol", dir).code == 2);
    std::ofstream(dir / "nohdr.vol", std::ios::binary) << "abcd";
    CHECK(run("segment --in " + d + "/nohdr.vol --out " + d + "/o.vol", dir).code == 2);
    CHECK(run("--help", dir).code == 0);
}

TEST_CASE("pipeline on the demo configuration", "[cli][pipeline]") {
    auto dir = testing::scratch_dir("cli_pipeline");
    auto res = run(std::string("pipeline --config ") + TOPKMIP_DEMO_CONFIG + " --output-dir " + dir.string(), dir);
    REQUIRE(res.code == 0);
    auto m = raw_io::read_json(dir / "manifest.json");
    CHECK(m["metrics"]["dsc"].get<double>() >= 0.8);
    CHECK(m["config"]["seed"] == 7);
    CHECK(nlohmann::json::parse(res.out)["config_hash"] == m["config_hash"]);
}
