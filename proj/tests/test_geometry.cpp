#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Sparse>
#include <map>

#include "test_support.hpp"

using namespace topkmip;
using Catch::Approx;

namespace {

double total_length(const std::vector<ray_segment>& segs) {
    double s = 0;
    for (auto& x : segs)
        s += x.length;
    return s;
}

ray random_ray(splitmix64& rng, extent3 d) {
    ray r;
    for (int ax = 0; ax < 3; ++ax) {
        double n = static_cast<double>(ax == 0 ? d.nx : ax == 1 ? d.ny : d.nz);
        r.origin[ax] = rng.uniform(-0.5 * n, 1.5 * n);
    }
    double th = rng.uniform(0, 2 * std::numbers::pi), ph = std::acos(rng.uniform(-1, 1));
    r.direction = {std::sin(ph) * std::cos(th), std::sin(ph) * std::sin(th), std::cos(ph)};
    return r;
}

} // namespace

TEST_CASE("geometry angles and validation", "[geometry]") {
    auto g = make_geometry({}, {64, 64, 64});
    CHECK(g.n_views() == 180);
    CHECK(g.angle_deg(0) == 0.0);
    CHECK(g.angle_deg(179) == 179.0);
    CHECK(g.nu() == 64);
    CHECK(g.nv() == 64);

    geometry_config one;
    one.n_views = 1;
    CHECK(make_geometry(one, {4, 4, 4}).n_views() == 1);

    geometry_config quarter;
    quarter.n_views = 4;
    quarter.angle_step_deg = 45;
    auto q = make_geometry(quarter, {4, 4, 4});
    CHECK(q.angle_deg(0) == 0);
    CHECK(q.angle_deg(1) == 45);
    CHECK(q.angle_deg(2) == 90);
    CHECK(q.angle_deg(3) == 135);

    geometry_config bad = quarter;
    bad.angle_step_deg = 60;
    CHECK_THROWS_AS(make_geometry(bad, {4, 4, 4}), invalid_argument);
    bad = quarter;
    bad.angle_start_deg = -1;
    CHECK_THROWS_AS(make_geometry(bad, {4, 4, 4}), invalid_argument);
    bad = quarter;
    bad.n_views = 0;
    CHECK_THROWS_AS(make_geometry(bad, {4, 4, 4}), invalid_argument);
    bad = quarter;
    bad.angle_step_deg = 0;
    CHECK_THROWS_AS(make_geometry(bad, {4, 4, 4}), invalid_argument);
    bad = quarter;
    bad.detector_spacing = {0.0, 1.0};
    CHECK_THROWS_AS(make_geometry(bad, {4, 4, 4}), invalid_argument);

    nlohmann::json j = q;
    CHECK(nlohmann::json::parse(j.dump()).get<projection_geometry>() == q);
}

TEST_CASE("axis-aligned ray through a 4^3 volume", "[geometry]") {
    extent3 d{4, 4, 4};
    projection_geometry g(2, 0, 90, 4, 4);
    for (std::size_t view = 0; view < 2; ++view)
        for (std::size_t v = 0; v < 4; ++v)
            for (std::size_t u = 0; u < 4; ++u) {
                auto segs = trace_ray(make_ray(g, d, {}, view, u, v), d, {});
                REQUIRE(segs.size() == 4);
                for (auto& s : segs)
                    CHECK(s.length == Approx(1.0).epsilon(1e-12));
            }
}

TEST_CASE("ray missing the volume has no segments", "[geometry]") {
    extent3 d{4, 4, 4};
    projection_geometry g(1, 0, 1, 3, 1, 10.0, 1.0);
    CHECK(trace_ray(make_ray(g, d, {}, 0, 0, 0), d, {}).empty());
    CHECK(trace_ray(make_ray(g, d, {}, 0, 2, 0), d, {}).empty());
    CHECK(trace_ray(make_ray(g, d, {}, 0, 1, 0), d, {}).size() == 4);
    projection_geometry above(1, 0, 1, 1, 3, 1.0, 10.0);
    CHECK(trace_ray(make_ray(above, d, {}, 0, 0, 2), d, {}).empty());
}

TEST_CASE("45 degree diagonal through 2x2x1", "[geometry]") {
    extent3 d{2, 2, 1};
    projection_geometry g(1, 45, 1, 1, 1);
    auto segs = trace_ray(make_ray(g, d, {}, 0, 0, 0), d, {});
    CHECK(total_length(segs) == Approx(2 * std::sqrt(2.0)).epsilon(1e-12));
    for (auto& s : segs)
        CHECK(s.length > 0);
}

TEST_CASE("trace_ray agrees with slab clipping per voxel", "[geometry][property]") {
    splitmix64 rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
        extent3 d{1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(6)};
        spacing3 sp{rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(0.5, 2)};
        ray r = random_ray(rng, d);
        for (int ax = 0; ax < 3; ++ax)
            r.origin[ax] *= ax == 0 ? sp.sx : ax == 1 ? sp.sy : sp.sz;
        auto segs = trace_ray(r, d, sp);
        std::map<std::size_t, double> got;
        for (auto& s : segs)
            got[s.index] += s.length;
        double diag = std::sqrt(sp.sx * sp.sx + sp.sy * sp.sy + sp.sz * sp.sz);
        double total = 0;
        for (std::size_t z = 0; z < d.nz; ++z)
            for (std::size_t y = 0; y < d.ny; ++y)
                for (std::size_t x = 0; x < d.nx; ++x) {
                    std::size_t i = x + d.nx * (y + d.ny * z);
                    double expect = testing::box_chord(r, {x * sp.sx, y * sp.sy, z * sp.sz},
                                                       {(x + 1) * sp.sx, (y + 1) * sp.sy, (z + 1) * sp.sz});
                    double have = got.count(i) ? got[i] : 0.0;
                    CHECK(have == Approx(expect).margin(1e-9));
                    CHECK(have <= diag + 1e-9);
                    total += have;
                }
        volume box(d, sp);
        CHECK(total <= box.diagonal() + 1e-9);
        CHECK(total == Approx(testing::box_chord(r, {0, 0, 0}, {d.nx * sp.sx, d.ny * sp.sy, d.nz * sp.sz}))
                           .margin(1e-9));
    }
}

TEST_CASE("trace_ray is deterministic and ordered", "[geometry]") {
    extent3 d{7, 5, 3};
    projection_geometry g(5, 3, 37, 9, 4, 0.8, 0.9);
    for (std::size_t view = 0; view < g.n_views(); ++view)
        for (std::size_t u = 0; u < g.nu(); ++u) {
            auto r = make_ray(g, d, {}, view, u, 1);
            auto a = trace_ray(r, d, {}), b = trace_ray(r, d, {});
            CHECK(a == b);
            // Traversal order: successive voxel centres move forward along the ray.
            double prev = -1e300;
            for (auto& s : a) {
                std::size_t x = s.index % d.nx, y = (s.index / d.nx) % d.ny;
                double t = (x + 0.5 - r.origin[0]) * r.direction[0] + (y + 0.5 - r.origin[1]) * r.direction[1];
                CHECK(t > prev - 1.0);
                prev = std::max(prev, t);
            }
        }
}

TEST_CASE("system matrix matches the dense slab oracle", "[geometry][property]") {
    extent3 d{5, 4, 3};
    spacing3 sp{1.0, 1.25, 0.75};
    projection_geometry g(7, 5, 25, 6, 4, 1.1, 0.9);
    auto a = build_system_matrix(g, d, sp);
    auto dense = testing::brute_force_matrix(g, d, sp);
    REQUIRE(a.n_rays() == g.n_rays());
    REQUIRE(a.n_voxels() == d.size());
    for (std::size_t r = 0; r < a.n_rays(); ++r) {
        auto idx = a.row_indices(r);
        auto len = a.row_lengths(r);
        CHECK(std::is_sorted(idx.begin(), idx.end()));
        CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
        std::vector<double> row(d.size(), 0.0);
        for (std::size_t i = 0; i < idx.size(); ++i)
            row[idx[i]] = len[i];
        for (std::size_t c = 0; c < d.size(); ++c)
            CHECK(row[c] == Approx(dense[r][c]).margin(1e-9));
    }
}

TEST_CASE("single detector pixel gives a single row", "[geometry]") {
    projection_geometry g(1, 0, 1, 1, 1);
    auto a = build_system_matrix(g, {3, 3, 3}, {});
    CHECK(a.n_rays() == 1);
    CHECK(a.n_entries() == 3);
}

TEST_CASE("system matrix respects the entry budget", "[geometry]") {
    projection_geometry g(10, 0, 10, 8, 8);
    CHECK_THROWS_AS(build_system_matrix(g, {8, 8, 8}, {}, 100), memory_budget_error);
    CHECK_NOTHROW(build_system_matrix(g, {8, 8, 8}, {}, 1'000'000));
}

TEST_CASE("adjoint identity holds for both projectors", "[geometry][property]") {
    extent3 d{8, 8, 8};
    auto g = make_geometry({12, 0, 15, {0, 0}, {1, 1}}, d);
    auto a = build_system_matrix(g, d, {});
    matrix_free_projector mf(g, d);
    explicit_projector ex(a);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto x = testing::random_volume(d, seed);
        auto y = testing::random_stack(g, seed + 1000);
        for (int which = 0; which < 2; ++which) {
            auto ax = which ? ex.forward(x) : mf.forward(x);
            auto aty = which ? ex.adjoint(y) : mf.adjoint(y);
            double lhs = testing::dot(ax.data(), y.data());
            double rhs = testing::dot(x.data(), aty.data());
            CHECK(std::abs(lhs - rhs) <= 1e-4 * std::max(std::abs(lhs), std::abs(rhs)));
        }
    }
}

TEST_CASE("matrix-free and explicit projectors agree", "[geometry]") {
    extent3 d{9, 7, 5};
    spacing3 sp{1.0, 0.8, 1.2};
    projection_geometry g(13, 0.5, 13.7, 11, 6, 0.9, 1.1);
    auto a = build_system_matrix(g, d, sp);
    auto x = testing::random_volume(d, 5, sp);
    auto y = testing::random_stack(g, 6);
    auto f1 = matrix_free_projector(g, d, sp).forward(x), f2 = explicit_projector(a).forward(x);
    for (std::size_t i = 0; i < f1.size(); ++i)
        CHECK(f1[i] == Approx(f2[i]).epsilon(1e-5).margin(1e-6));
    auto b1 = matrix_free_projector(g, d, sp).adjoint(y), b2 = explicit_projector(a).adjoint(y);
    for (std::size_t i = 0; i < b1.size(); ++i)
        CHECK(b1[i] == Approx(b2[i]).epsilon(1e-5).margin(1e-6));
}

TEST_CASE("explicit adjoint equals the sparse transpose", "[geometry]") {
    extent3 d{6, 6, 4};
    projection_geometry g(9, 0, 20, 8, 4);
    auto a = build_system_matrix(g, d, {});
    Eigen::SparseMatrix<double, Eigen::RowMajor> m(static_cast<Eigen::Index>(a.n_rays()),
                                                  static_cast<Eigen::Index>(a.n_voxels()));
    std::vector<Eigen::Triplet<double>> trips;
    for (std::size_t r = 0; r < a.n_rays(); ++r) {
        auto idx = a.row_indices(r);
        auto len = a.row_lengths(r);
        for (std::size_t i = 0; i < idx.size(); ++i)
            trips.emplace_back(static_cast<int>(r), static_cast<int>(idx[i]), len[i]);
    }
    m.setFromTriplets(trips.begin(), trips.end());
    auto y = testing::random_stack(g, 77);
    Eigen::VectorXd yv(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i)
        yv[static_cast<Eigen::Index>(i)] = y[i];
    Eigen::VectorXd expect = m.transpose() * yv;
    auto got = adjoint_apply(a, y);
    for (std::size_t i = 0; i < got.size(); ++i)
        CHECK(got[i] == Approx(expect[static_cast<Eigen::Index>(i)]).epsilon(1e-6).margin(1e-6));
}

TEST_CASE("forward of ones equals chord lengths through the box", "[geometry]") {
    extent3 d{6, 5, 4};
    spacing3 sp{1.0, 1.5, 0.5};
    projection_geometry g(10, 0, 17, 9, 5, 1.2, 0.6);
    volume ones(d, sp, volume_kind::intensity, 1.0f);
    auto p = forward_apply(g, ones);
    for (std::size_t view = 0; view < g.n_views(); ++view)
        for (std::size_t v = 0; v < g.nv(); ++v)
            for (std::size_t u = 0; u < g.nu(); ++u) {
                double expect = testing::box_chord(make_ray(g, d, sp, view, u, v), {0, 0, 0},
                                                   {d.nx * sp.sx, d.ny * sp.sy, d.nz * sp.sz});
                CHECK(p.at(view, v, u) == Approx(expect).epsilon(1e-6).margin(1e-6));
            }
}

TEST_CASE("worker count does not change projector output", "[geometry]") {
    extent3 d{12, 10, 9};
    projection_geometry g(37, 0, 4.5, 14, 9);
    auto x = testing::random_volume(d, 8);
    auto y = testing::random_stack(g, 9);
    matrix_free_projector one(g, d, {}, 1);
    for (unsigned w : {2u, 3u, 8u}) {
        matrix_free_projector many(g, d, {}, w);
        CHECK(many.forward(x) == one.forward(x));
        CHECK(many.adjoint(y) == one.adjoint(y));
    }
    auto a = build_system_matrix(g, d, {});
    CHECK(forward_apply(a, x, 4) == forward_apply(a, x, 1));
}

TEST_CASE("single-ray adjoint spreads chord lengths", "[geometry]") {
    extent3 d{5, 5, 3};
    projection_geometry g(1, 30, 1, 1, 1);
    projection_stack y(g, 1.0f);
    auto back = adjoint_apply(g, y, d);
    auto segs = trace_ray(make_ray(g, d, {}, 0, 0, 0), d, {});
    std::vector<double> expect(d.size(), 0.0);
    for (auto& s : segs)
        expect[s.index] += s.length;
    for (std::size_t i = 0; i < d.size(); ++i)
        CHECK(back[i] == Approx(expect[i]).margin(1e-6));
}

TEST_CASE("projector rejects mismatched grids", "[geometry]") {
    projection_geometry g(2, 0, 90, 4, 4);
    matrix_free_projector p(g, {4, 4, 4});
    CHECK_THROWS_AS(p.forward(volume(extent3{3, 4, 4})), dimension_error);
    CHECK_THROWS_AS(p.adjoint(projection_stack(projection_geometry(3, 0, 10, 4, 4))), dimension_error);
}
