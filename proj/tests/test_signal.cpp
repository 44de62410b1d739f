#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "t1rho/phantom.hpp"
#include "t1rho/signal.hpp"

using namespace t1rho;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("decay model values") {
    CHECK(signal(100.0, 40.0, 0.0) == 100.0);
    CHECK_THAT(signal(100.0, 40.0, 40.0), WithinAbs(36.7879441, 1e-7));
    CHECK(signal(0.0, 40.0, 50.0) == 0.0);
    REQUIRE_THROWS(signal(100.0, 0.0, 10.0));
    REQUIRE_THROWS(signal(100.0, -3.0, 10.0));
}

TEST_CASE("decay model is strictly decreasing and log-linear") {
    for (double t1 : {5.0, 30.0, 70.0, 150.0}) {
        double prev = signal(250.0, t1, 0.0);
        for (double tsl = 1.0; tsl <= 80.0; tsl += 1.0) {
            const double s = signal(250.0, t1, tsl);
            CHECK(s < prev);
            prev = s;
            CHECK_THAT(std::log(s), WithinAbs(std::log(250.0) - tsl / t1, 1e-12));
        }
    }
}

TEST_CASE("zero sigma noise is the identity") {
    Volume3D v({5, 4, 2}, {}, 0.0);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = double(i) * 1.5;
    CHECK(rician_noise(v, 0.0, 7) == v);
}

TEST_CASE("Rician noise on a zero image has the Rayleigh mean") {
    const Volume3D zero({400, 250, 1}, {}, 0.0);
    const auto out = rician_noise(zero, 1.0, 99);
    double m = 0.0;
    for (double x : out.data()) {
        REQUIRE(x >= 0.0);
        m += x;
    }
    m /= double(out.size());
    CHECK_THAT(m, WithinRel(std::sqrt(std::numbers::pi / 2.0), 0.02));
}

TEST_CASE("Rician noise at high SNR is nearly unbiased") {
    const Volume3D flat({400, 250, 1}, {}, 100.0);
    const auto out = rician_noise(flat, 1.0, 5);
    double m = 0.0;
    for (double x : out.data()) m += x;
    m /= double(out.size());
    CHECK(m >= 99.9);
    CHECK(m <= 100.11);
}

TEST_CASE("noise draws are seeded") {
    const Volume3D flat({30, 30, 1}, {}, 10.0);
    CHECK(rician_noise(flat, 2.0, 3) == rician_noise(flat, 2.0, 3));
    CHECK_FALSE(rician_noise(flat, 2.0, 3) == rician_noise(flat, 2.0, 4));
}

namespace {

PhantomSpec small_spec() {
    PhantomSpec s;
    s.dims = {48, 48, 3};
    s.n_subjects = 3;
    return s;
}

} // namespace

TEST_CASE("degenerate surrogate equals the TSL 0 image") {
    auto s = small_spec();
    s.noise_sigma = 0.0;
    s.bias_amplitude = 0.0;
    s.pd_contrast_gain = {1.0, 1.0, 1.0, 1.0};
    const auto b = generate_phantom(s, 1);
    const auto& t0 = b.at_tsl(0.0);
    for (std::size_t i = 0; i < t0.size(); ++i) REQUIRE_THAT(b.pd_surrogate[i], WithinAbs(t0[i], 1e-12));
}

TEST_CASE("phantoms are a pure function of seed and index") {
    const auto s = small_spec();
    const auto a = generate_phantom(s, 2);
    const auto b = generate_phantom(s, 2);
    CHECK(a.truth_t1rho == b.truth_t1rho);
    CHECK(a.pd_surrogate == b.pd_surrogate);
    CHECK(a.roi == b.roi);
    for (const auto& [tsl, img] : a.weighted) CHECK(img == b.at_tsl(tsl));
    const auto c = generate_phantom(s, 0);
    CHECK_FALSE(a.truth_t1rho == c.truth_t1rho);
}

TEST_CASE("default noise level gives cartilage SNR 50") {
    const auto s = small_spec();
    const auto b = generate_phantom(s, 0);
    double m = 0.0;
    for (std::size_t i = 0; i < b.roi.size(); ++i)
        if (b.roi[i]) m += b.i0_truth[i];
    m /= double(b.roi.count());
    CHECK_THAT(m / b.sigma_abs, WithinRel(50.0, 1e-9));
}

TEST_CASE("phantom structure invariants") {
    auto s = small_spec();
    for (int idx = 0; idx < s.n_subjects; ++idx) {
        const auto b = generate_phantom(s, idx);
        REQUIRE(b.roi.count() > 0);
        CHECK(b.pd_surrogate.dims() == b.truth_t1rho.dims());
        for (const auto& [tsl, img] : b.weighted) CHECK(img.dims() == b.truth_t1rho.dims());
        for (std::size_t i = 0; i < b.roi.size(); ++i)
            if (b.roi[i]) {
                REQUIRE(b.truth_t1rho[i] >= s.t1rho_range_ms.low);
                REQUIRE(b.truth_t1rho[i] <= s.t1rho_range_ms.high);
            }
    }
}

TEST_CASE("noiseless weighted images decay with TSL") {
    auto s = small_spec();
    s.noise_sigma = 0.0;
    const auto b = generate_phantom(s, 1);
    const auto sched = s.schedule();
    for (std::size_t k = 1; k < sched.size(); ++k) {
        const auto& a = b.at_tsl(sched[k - 1]);
        const auto& c = b.at_tsl(sched[k]);
        for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] >= c[i]);
    }
}

TEST_CASE("bias field amplitude bounds the surrogate deviation") {
    auto s = small_spec();
    s.noise_sigma = 0.0;
    s.pd_contrast_gain = {1.0, 1.0, 1.0, 1.0};
    const auto b = generate_phantom(s, 0);
    double peak = 0.0;
    for (std::size_t i = 0; i < b.i0_truth.size(); ++i)
        if (b.i0_truth[i] > 0.0) peak = std::max(peak, std::abs(b.pd_surrogate[i] / b.i0_truth[i] - 1.0));
    CHECK(peak <= s.bias_amplitude + 1e-12);
    CHECK(peak >= 0.5 * s.bias_amplitude);
}

TEST_CASE("phantom spec validation") {
    auto s = small_spec();
    s.dims = {16, 48, 2};
    REQUIRE_THROWS_WITH(generate_phantom(s, 0), ContainsSubstring("32"));
    s = small_spec();
    s.t1rho_range_ms = {70.0, 30.0};
    REQUIRE_THROWS(generate_phantom(s, 0));
    s = small_spec();
    s.noise_sigma = -0.1;
    REQUIRE_THROWS(generate_phantom(s, 0));
}
