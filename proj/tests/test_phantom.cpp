#include <catch2/catch_amalgamated.hpp>

#include <numbers>

#include "test_support.hpp"

using namespace topkmip;

TEST_CASE("depth-1 phantom is a single tube of the analytic volume", "[phantom]") {
    phantom_config cfg;
    cfg.dims = {48, 64, 48};
    cfg.depth = 1;
    cfg.root_radius = 4.0;
    cfg.root_length = 0.6;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        cfg.seed = seed;
        auto ph = generate_vessel_tree(cfg);
        CHECK_FALSE(ph.clipped);
        REQUIRE(ph.centerline.edges.size() == 1);
        double count = 0;
        for (float x : ph.mask.data())
            count += x;
        double analytic = std::numbers::pi * 4.0 * 4.0 * (0.6 * 64);
        CHECK(std::abs(count - analytic) / analytic < 0.15);
        CHECK(connected_components(ph.mask).components.size() == 1);
    }
}

TEST_CASE("phantom is deterministic per seed", "[phantom]") {
    phantom_config cfg;
    cfg.seed = 99;
    auto a = generate_vessel_tree(cfg), b = generate_vessel_tree(cfg);
    CHECK(a.mask == b.mask);
    CHECK(generate_ct_like(a.mask, cfg) == generate_ct_like(b.mask, cfg));
    cfg.seed = 100;
    CHECK_FALSE(generate_vessel_tree(cfg).mask == a.mask);
}

TEST_CASE("depth-3 tree is one 26-connected component", "[phantom]") {
    phantom_config cfg;
    cfg.depth = 3;
    cfg.radius_decay = 0.7;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        cfg.seed = seed;
        auto ph = generate_vessel_tree(cfg);
        CHECK(ph.centerline.edges.size() == 7);
        CHECK(ph.centerline.nodes.size() == 8);
        CHECK(connected_components(ph.mask, connectivity::c26).components.size() == 1);
    }
}

TEST_CASE("centerline graph JSON round trip", "[phantom]") {
    auto ph = generate_vessel_tree({});
    nlohmann::json j = ph.centerline;
    CHECK(j.contains("nodes"));
    CHECK(j.contains("edges"));
    CHECK(j.contains("radii"));
    auto back = nlohmann::json::parse(j.dump()).get<centerline_graph>();
    CHECK(back.edges == ph.centerline.edges);
    CHECK(back.radii == ph.centerline.radii);
    CHECK(back.nodes == ph.centerline.nodes);
}

TEST_CASE("CT-like volume", "[phantom]") {
    phantom_config cfg;
    auto ph = generate_vessel_tree(cfg);
    SECTION("noise-free is two-level and vessels are brighter") {
        cfg.noise_sigma = 0.0;
        auto ct = generate_ct_like(ph.mask, cfg);
        for (std::size_t i = 0; i < ct.size(); ++i) {
            float expect = static_cast<float>(cfg.background_intensity + cfg.vessel_intensity * ph.mask[i]);
            CHECK(ct[i] == expect);
            if (ph.mask[i] != 0.0f)
                CHECK(ct[i] > static_cast<float>(cfg.background_intensity));
        }
    }
    SECTION("empty mask gives background plus noise") {
        volume empty(ph.mask.dims(), {}, volume_kind::binary_mask);
        auto ct = generate_ct_like(empty, cfg);
        double mean = 0;
        for (float x : ct.data())
            mean += x / ct.size();
        CHECK(std::abs(mean - cfg.background_intensity) < 3 * cfg.noise_sigma / std::sqrt(double(ct.size())));
    }
    SECTION("contrast matches configuration within sampling error") {
        auto ct = generate_ct_like(ph.mask, cfg);
        double sv = 0, sb = 0;
        std::size_t nv = 0, nb = 0;
        for (std::size_t i = 0; i < ct.size(); ++i)
            if (ph.mask[i] != 0.0f) {
                sv += ct[i];
                ++nv;
            } else {
                sb += ct[i];
                ++nb;
            }
        double contrast = sv / nv - sb / nb;
        double tol = 3 * cfg.noise_sigma * std::sqrt(1.0 / nv + 1.0 / nb);
        CHECK(std::abs(contrast - cfg.vessel_intensity) < tol);
    }
}

TEST_CASE("phantom config validation", "[phantom]") {
    phantom_config cfg;
    cfg.depth = 0;
    CHECK_THROWS_AS(generate_vessel_tree(cfg), invalid_argument);
    cfg = {};
    cfg.radius_decay = 1.5;
    CHECK_THROWS_AS(generate_vessel_tree(cfg), invalid_argument);
    cfg = {};
    cfg.root_radius = 0;
    CHECK_THROWS_AS(generate_vessel_tree(cfg), invalid_argument);
}

TEST_CASE("splitmix64 reference values", "[phantom][rng]") {
    // Published SplitMix64 outputs for seed 0 (first three draws).
    splitmix64 rng(0);
    CHECK(rng.next() == 0xE220A8397B1DCDAFull);
    CHECK(rng.next() == 0x6E789E6AA1B965F4ull);
    CHECK(rng.next() == 0x06C45D188009454Full);
}
