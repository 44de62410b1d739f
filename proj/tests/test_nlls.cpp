#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "t1rho/nlls.hpp"
#include "t1rho/phantom.hpp"
#include "t1rho/signal.hpp"

using namespace t1rho;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

Volume3D single(double v) { return Volume3D({1, 1, 1}, {}, v); }

std::map<double, Volume3D> decay_images(const Volume3D& i0, const Volume3D& t1, const std::vector<double>& tsl) {
    std::map<double, Volume3D> out;
    for (double t : tsl) {
        Volume3D v = i0;
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = signal(i0[i], t1[i], t);
        out.emplace(t, std::move(v));
    }
    return out;
}

} // namespace

TEST_CASE("two-point closed form inverts the decay model") {
    const auto r = fit_two_point(single(100.0), single(100.0 * std::exp(-1.0)), 0.0, 40.0);
    CHECK_THAT(r.t1rho_map[0], WithinAbs(40.0, 1e-9));
    CHECK(r.valid[0]);
    // Same pair with the weighted intensity rounded to seven decimals.
    const auto rounded = fit_two_point(single(100.0), single(36.7879441), 0.0, 40.0);
    CHECK_THAT(rounded.t1rho_map[0], WithinAbs(40.0, 1e-7));
}

TEST_CASE("two-point fit flags undefined or non-physical ratios") {
    for (double ik : {100.0, 110.0, 0.0, -3.0}) {
        const auto r = fit_two_point(single(100.0), single(ik), 0.0, 50.0);
        CHECK(r.t1rho_map[0] == 200.0);
        CHECK_FALSE(r.valid[0]);
    }
}

TEST_CASE("two-point fit clamps out-of-bounds estimates") {
    // ln ratio tiny -> T far above the upper bound.
    const auto r = fit_two_point(single(100.0), single(99.99), 0.0, 50.0);
    CHECK(r.t1rho_map[0] == 200.0);
    CHECK_FALSE(r.valid[0]);
    const auto low = fit_two_point(single(100.0), single(1e-30), 0.0, 50.0);
    CHECK(low.t1rho_map[0] == 1.0);
    CHECK_FALSE(low.valid[0]);
}

TEST_CASE("two-point fit argument errors") {
    REQUIRE_THROWS_WITH(fit_two_point(Volume3D({2, 1, 1}, {}, 1.0), single(1.0), 0.0, 50.0),
                        ContainsSubstring("dims mismatch"));
    REQUIRE_THROWS(fit_two_point(single(2.0), single(1.0), 50.0, 50.0));
    REQUIRE_THROWS(fit_two_point(single(2.0), single(1.0), 50.0, 10.0));
}

TEST_CASE("two-point fit composed with the forward model is the identity") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ui0(10.0, 2000.0), ut(2.0, 180.0), utsl(1.0, 60.0);
    for (int trial = 0; trial < 500; ++trial) {
        const double i0 = ui0(rng), t1 = ut(rng), tk = utsl(rng);
        const auto r = fit_two_point(single(i0), single(signal(i0, t1, tk)), 0.0, tk);
        REQUIRE(r.valid[0]);
        REQUIRE_THAT(r.t1rho_map[0], WithinRel(t1, 1e-9));
        REQUIRE_THAT(r.i0_map[0], WithinRel(i0, 1e-9));
    }
}

TEST_CASE("LM recovers noiseless four-point data") {
    const auto imgs = decay_images(single(100.0), single(40.0), {0.0, 10.0, 30.0, 50.0});
    const auto r = fit_lm(imgs, TslSchedule({0.0, 10.0, 30.0, 50.0}));
    CHECK_THAT(r.i0_map[0], WithinRel(100.0, 1e-6));
    CHECK_THAT(r.t1rho_map[0], WithinRel(40.0, 1e-6));
    CHECK(r.valid[0]);
}

TEST_CASE("LM on two points agrees with the closed form") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> ui0(50.0, 1500.0), ut(5.0, 150.0);
    for (int trial = 0; trial < 200; ++trial) {
        const auto i0 = single(ui0(rng)), t1 = single(ut(rng));
        const auto imgs = decay_images(i0, t1, {0.0, 50.0});
        const auto lm = fit_lm(imgs, TslSchedule({0.0, 50.0}));
        const auto cf = fit_two_point(imgs.at(0.0), imgs.at(50.0), 0.0, 50.0);
        REQUIRE_THAT(lm.t1rho_map[0], WithinRel(cf.t1rho_map[0], 1e-6));
    }
}

TEST_CASE("LM matches a brute-force grid search on noisy data") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> ui0(800.0, 1200.0), ut(30.0, 70.0);
    std::normal_distribution<double> g(0.0, 1.0);
    const std::vector<double> tsl{0.0, 10.0, 30.0, 50.0};
    int ok = 0;
    const int trials = 200;
    for (int trial = 0; trial < trials; ++trial) {
        const double i0 = ui0(rng), t1 = ut(rng), sigma = 1000.0 / 50.0;
        std::vector<double> y;
        for (double t : tsl) {
            const double s = signal(i0, t1, t);
            y.push_back(std::hypot(s + sigma * g(rng), sigma * g(rng)));
        }
        const double i0_max = 4.0 * *std::max_element(y.begin(), y.end());
        const auto f = fit_voxel_lm(tsl, y, FitBounds{}, i0_max);
        const auto o = oracle::grid_search(tsl, y, 1.0, 200.0, i0_max);
        ok += f.sse <= o.sse + 1e-8;
    }
    CHECK(ok >= int(0.99 * trials));
}

TEST_CASE("LM SSE never increases across accepted steps") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> ui0(100.0, 1000.0), ut(5.0, 150.0);
    std::normal_distribution<double> g(0.0, 1.0);
    const std::vector<double> tsl{0.0, 10.0, 30.0, 50.0};
    for (int trial = 0; trial < 200; ++trial) {
        const double i0 = ui0(rng), t1 = ut(rng);
        std::vector<double> y;
        for (double t : tsl) y.push_back(std::max(1e-3, signal(i0, t1, t) + 0.05 * i0 * g(rng)));
        const auto f = fit_voxel_lm(tsl, y, FitBounds{}, 4.0 * i0, {}, true);
        REQUIRE(!f.sse_trace.empty());
        for (std::size_t k = 1; k < f.sse_trace.size(); ++k) REQUIRE(f.sse_trace[k] <= f.sse_trace[k - 1]);
    }
}

TEST_CASE("LM map is scale equivariant and finite") {
    PhantomSpec s;
    s.dims = {40, 40, 1};
    const auto b = generate_phantom(s, 0);
    const auto r1 = fit_lm(b.weighted, s.schedule());
    std::map<double, Volume3D> scaled;
    for (const auto& [t, img] : b.weighted) {
        Volume3D v = img;
        for (auto& x : v.data()) x *= 3.5;
        scaled.emplace(t, std::move(v));
    }
    const auto r2 = fit_lm(scaled, s.schedule());
    for (std::size_t i = 0; i < r1.t1rho_map.size(); ++i) {
        REQUIRE(std::isfinite(r1.t1rho_map[i]));
        REQUIRE(std::isfinite(r1.i0_map[i]));
        if (!b.roi[i]) continue;
        REQUIRE_THAT(r2.t1rho_map[i], WithinRel(r1.t1rho_map[i], 1e-9));
        REQUIRE_THAT(r2.i0_map[i], WithinRel(3.5 * r1.i0_map[i], 1e-9));
    }
}

TEST_CASE("LM validity and bounds") {
    PhantomSpec s;
    s.dims = {40, 40, 1};
    const auto b = generate_phantom(s, 1);
    const FitBounds bounds;
    const auto r = fit_lm(b.weighted, s.schedule(), bounds);
    std::size_t valid_roi = 0;
    for (std::size_t i = 0; i < r.t1rho_map.size(); ++i) {
        REQUIRE(r.t1rho_map[i] >= bounds.t1rho_min_ms);
        REQUIRE(r.t1rho_map[i] <= bounds.t1rho_max_ms);
        if (b.roi[i]) valid_roi += r.valid[i];
    }
    CHECK(valid_roi == b.roi.count());
    // Zero-intensity background cannot be initialized and is flagged.
    const auto zero = decay_images(single(0.0), single(40.0), {0.0, 10.0});
    CHECK_FALSE(fit_lm(zero, TslSchedule({0.0, 10.0})).valid[0]);
}

TEST_CASE("LM argument errors") {
    const auto imgs = decay_images(single(100.0), single(40.0), {0.0, 10.0});
    REQUIRE_THROWS_WITH(fit_lm(imgs, TslSchedule({0.0})), ContainsSubstring("at least 2"));
    REQUIRE_THROWS(fit_lm(imgs, TslSchedule({0.0, 30.0})));
    auto bad = imgs;
    bad.at(10.0) = Volume3D({2, 1, 1}, {}, 1.0);
    REQUIRE_THROWS_WITH(fit_lm(bad, TslSchedule({0.0, 10.0})), ContainsSubstring("dims mismatch"));
    FitBounds fb;
    fb.t1rho_min_ms = 300.0;
    REQUIRE_THROWS(fit_lm(imgs, TslSchedule({0.0, 10.0}), fb));
}
