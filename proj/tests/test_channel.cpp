#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cvqkd/channel.hpp"
#include "cvqkd/detector.hpp"
#include "cvqkd/stats.hpp"

using namespace cvqkd;
using Catch::Approx;

TEST_CASE("fiber transmittance follows the dB law") {
    CHECK(fiber_transmittance({0.2, 10.0}) == Approx(0.6310).margin(5e-5));
    CHECK(fiber_transmittance({3.7, 0.0}) == 1.0);
    CHECK(fiber_transmittance({1.0, 10.0}) == Approx(0.1).epsilon(1e-12));
}

TEST_CASE("free-space transmittance follows the exponential law") {
    // alpha_nat * L = 1  <=>  alpha_dB = 10 / (L ln 10)
    const double alpha_db = 10.0 / (std::log(10.0) * 5.0);
    CHECK(free_space_transmittance({alpha_db, 5.0}) == Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(free_space_transmittance({12.0, 0.0}) == 1.0);
}

TEST_CASE("transmittance laws are decreasing in distance and 1 at zero") {
    double prev_f = 1.0, prev_s = 1.0;
    CHECK(fiber_transmittance({0.2, 0.0}) == 1.0);
    CHECK(free_space_transmittance({2.0, 0.0}) == 1.0);
    for (double L = 0.5; L < 60.0; L += 0.5) {
        const double f = fiber_transmittance({0.2, L});
        const double s = free_space_transmittance({2.0, L});
        CHECK(f < prev_f);
        CHECK(s < prev_s);
        prev_f = f;
        prev_s = s;
    }
}

TEST_CASE("attenuation from visibility") {
    CHECK(attenuation_from_visibility({2.0, 1.0, 3.91, 0.55, 0.7}) == Approx(1.0).epsilon(1e-12));
    CHECK(attenuation_from_visibility({2.0, 1.0, 1.955, 0.55, 1.3}) == Approx(2.0).epsilon(1e-12));
    // frozen from a 30-digit evaluation of the formula
    CHECK(attenuation_from_visibility({2.0, 1.0, 23.0, 1.55, 1.3}) ==
          Approx(0.044206813370484).epsilon(1e-12));
    CHECK_THROWS_AS(attenuation_from_visibility({2.0, 1.0, 0.0, 1.55, 1.3}), std::domain_error);
    CHECK_THROWS_AS(attenuation_from_visibility(FreeSpaceConfig(2.0, 1.0)), std::domain_error);
}

TEST_CASE("gamma-gamma effective numbers from log variances") {
    CHECK(gg_params_from_log_variances(std::log(2.0), std::log(2.0)).alpha_eff == Approx(1.0));
    CHECK(gg_params_from_log_variances(std::log(1.25), 1.0).alpha_eff == Approx(4.0).epsilon(1e-12));
    CHECK_THROWS_AS(gg_params_from_log_variances(0.0, 0.1), std::domain_error);
    CHECK_THROWS_AS(gg_params_from_log_variances(0.1, -0.2), std::domain_error);
}

TEST_CASE("zernike phase variance") {
    CHECK(PhaseNoiseConfig::zernike(1.0, 0.1, 0.2).sigma2_phase == Approx(1.0).epsilon(1e-12));
    CHECK(PhaseNoiseConfig::zernike(0.5, 1.0, 1.0).sigma2_phase == Approx(2.0).epsilon(1e-12));
    CHECK(PhaseNoiseConfig::zernike(1.0299, 0.05, 0.2).sigma2_phase ==
          Approx(0.257475).epsilon(1e-12));
    CHECK_THROWS_AS(PhaseNoiseConfig::zernike(1.0, 0.05, 0.0), std::domain_error);
}

TEST_CASE("characteristic function of the phase density") {
    CHECK(char_function(0.0, 123.0) == 1.0);
    CHECK(char_function(1.0, 2.0) == Approx(std::exp(-1.0)).epsilon(1e-12));
    CHECK(char_function(2.0, 0.5) == Approx(std::exp(-1.0)).epsilon(1e-12));
    for (double w : {0.0, 0.5, 1.0, 3.0})
        for (double s2 : {0.0, 0.01, 0.5, 4.0}) {
            const double m = char_function(w, s2);
            CHECK(m > 0.0);
            CHECK(m <= 1.0);
            if (w * s2 != 0.0) CHECK(m < 1.0);
        }
}

TEST_CASE("gamma-gamma sampler matches its analytic moments") {
    Rng rng = make_rng(7, "gg-moments");
    const std::size_t n = 1000000;
    const GammaGammaParams p(4.0, 2.0);
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double I = sample_intensity(p, rng);
        s += I;
        s2 += I * I;
    }
    const double m = s / n;
    const double si = s2 / n / (m * m) - 1.0;
    CHECK(m == Approx(1.0).margin(0.01));
    CHECK(si == Approx(0.875).epsilon(0.02));
}

TEST_CASE("gamma-gamma mean and scintillation over an (alpha, beta) grid") {
    const std::size_t n = 200000;
    for (auto [a, b] : {std::pair{0.5, 0.5}, {1.0, 4.0}, {10.0, 3.0}, {50.0, 50.0}}) {
        Rng rng = make_rng(11, "gg-grid", static_cast<std::uint64_t>(a * 100 + b));
        const GammaGammaParams p(a, b);
        double s = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double I = sample_intensity(p, rng);
            s += I;
            s2 += I * I;
        }
        const double m = s / n;
        const double si = s2 / n / (m * m) - 1.0;
        const double si_exact = 1.0 / a + 1.0 / b + 1.0 / (a * b);
        CHECK(m == Approx(1.0).margin(0.02));
        CHECK(si == Approx(si_exact).epsilon(0.05));
    }
}

TEST_CASE("gamma-gamma limit of huge effective numbers is deterministic") {
    Rng rng = make_rng(3, "gg-limit");
    const GammaGammaParams p(1e6, 1e6);
    for (int i = 0; i < 100; ++i) CHECK(sample_intensity(p, rng) == Approx(1.0).margin(0.01));
}

TEST_CASE("log-normal sampler preserves the configured mean") {
    Rng rng = make_rng(5, "lognormal");
    const LogNormalParams p(0.6310, 0.05);
    double s = 0.0;
    const std::size_t n = 1000000;
    for (std::size_t i = 0; i < n; ++i) s += sample_intensity(p, rng);
    CHECK(s / n == Approx(0.6310).epsilon(0.01));
}

TEST_CASE("phase drift sampler") {
    auto zero = PhaseNoiseConfig::from_variance(0.0);
    Rng rng = make_rng(9, "phase");
    for (int i = 0; i < 16; ++i) CHECK(sample_phase_drift(zero, rng) == 0.0);

    auto cfg = PhaseNoiseConfig::from_variance(0.04);
    const std::size_t n = 1000000;
    std::vector<double> draws(n);
    for (auto& d : draws) d = sample_phase_drift(cfg, rng);
    CHECK(sample_variance(draws) == Approx(0.04).margin(0.001));

    // E[cos dphi] = M(1, sigma2) within 3 standard errors
    double c = 0.0, c2 = 0.0;
    for (double d : draws) {
        c += std::cos(d);
        c2 += std::cos(d) * std::cos(d);
    }
    const double mean_c = c / n;
    const double se = std::sqrt((c2 / n - mean_c * mean_c) / n);
    CHECK(std::fabs(mean_c - char_function(1.0, 0.04)) < 3.0 * se + 1e-12);
}

TEST_CASE("fluctuation moments") {
    SECTION("no fluctuation collapses to (1, 0, 1, 0, 1)") {
        Rng rng = make_rng(1, "mom0");
        const auto m = fluctuation_moments(NoFading{}, PhaseNoiseConfig::from_variance(0.0), 10000, rng);
        CHECK(m.e_a_cos == Approx(1.0).epsilon(1e-12));
        CHECK(m.e_a_sin == Approx(0.0).margin(1e-12));
        CHECK(m.e_a2_cos2 == Approx(1.0).epsilon(1e-12));
        CHECK(m.e_a2_sin2 == Approx(0.0).margin(1e-12));
        CHECK(m.e_a2 == Approx(1.0).epsilon(1e-12));
    }
    SECTION("phase-only moments match the closed form") {
        Rng rng = make_rng(2, "mom1");
        const auto m =
            fluctuation_moments(NoFading{}, PhaseNoiseConfig::from_variance(0.1), 400000, rng);
        CHECK(m.e_a_cos == Approx(0.951229424500714).epsilon(0.005));
        CHECK(std::fabs(m.e_a_sin) < 0.005);
    }
    SECTION("trigonometric completeness holds exactly on both paths") {
        for (auto method : {MomentMethod::MonteCarlo, MomentMethod::SemiAnalytic}) {
            Rng rng = make_rng(3, "mom2");
            const auto m = fluctuation_moments(GammaGammaParams(4.0, 2.0),
                                               PhaseNoiseConfig::from_variance(0.3), 50000, rng, method);
            CHECK(m.e_a2_cos2 + m.e_a2_sin2 == Approx(m.e_a2).epsilon(1e-12));
        }
    }
    SECTION("semi-analytic path zeroes the odd moment") {
        Rng rng = make_rng(4, "mom3");
        const auto m = fluctuation_moments(LogNormalParams(0.9, 0.1),
                                           PhaseNoiseConfig::from_variance(0.2), 20000, rng,
                                           MomentMethod::SemiAnalytic);
        CHECK(m.e_a_sin == 0.0);
    }
    SECTION("too few samples is rejected") {
        Rng rng = make_rng(5, "mom4");
        CHECK_THROWS_AS(
            fluctuation_moments(NoFading{}, PhaseNoiseConfig::from_variance(0.0), 100, rng),
            std::invalid_argument);
    }
}

TEST_CASE("closed-form intensity moments agree with sampling") {
    Rng rng = make_rng(6, "imom");
    const FadingDist dists[] = {FadingDist{LogNormalParams(0.87, 0.06)},
                                FadingDist{GammaGammaParams(4.0, 2.0)}};
    for (const auto& dist : dists) {
        const auto exact = intensity_moments(dist);
        double s_sqrt = 0.0, s_mean = 0.0;
        const std::size_t n = 400000;
        for (std::size_t i = 0; i < n; ++i) {
            const double I = sample_intensity(dist, rng);
            s_sqrt += std::sqrt(I);
            s_mean += I;
        }
        CHECK(s_sqrt / n == Approx(exact.e_sqrt).epsilon(0.005));
        CHECK(s_mean / n == Approx(exact.e_mean).epsilon(0.01));
    }
}

TEST_CASE("sub-channel realization") {
    const DetectorModel det(0.6, 0.01);
    SECTION("fading disabled reproduces the deterministic law") {
        Rng rng = make_rng(1, "real0");
        const ChannelConfig ch(0.631, NoFading{}, 0.01);
        const auto r = realize_subchannel(ch, PhaseNoiseConfig::from_variance(0.0), det, rng);
        CHECK(r.transmittance == Approx(0.631).epsilon(1e-12));
        CHECK(r.phase_drift == 0.0);
        CHECK(r.amp_attenuation == 1.0);
        CHECK_FALSE(r.clamped);
        CHECK(r.noise_var == Approx(1.0 + 0.6 * 0.631 * 0.01 + 0.01).epsilon(1e-12));
    }
    SECTION("unit-mean fading keeps the mean transmittance on target") {
        Rng rng = make_rng(2, "real1");
        const ChannelConfig ch(0.9703, LogNormalParams(1.0, 0.001), 0.01);
        double s = 0.0;
        const std::size_t n = 100000;
        for (std::size_t i = 0; i < n; ++i)
            s += realize_subchannel(ch, PhaseNoiseConfig::from_variance(0.002), det, rng).transmittance;
        CHECK(s / n == Approx(0.9703).epsilon(0.02));
    }
    SECTION("heavy fading tails clamp and bias the mean only slightly down") {
        Rng rng = make_rng(5, "real4");
        const ChannelConfig ch(0.5003, GammaGammaParams(10.0, 6.0), 0.01);
        double s = 0.0;
        std::size_t clamped = 0;
        const std::size_t n = 100000;
        for (std::size_t i = 0; i < n; ++i) {
            const auto r = realize_subchannel(ch, PhaseNoiseConfig::from_variance(0.01), det, rng);
            s += r.transmittance;
            clamped += r.clamped;
        }
        CHECK(clamped > 0);
        CHECK(s / n <= 0.5003);
        CHECK(s / n == Approx(0.5003).epsilon(0.05));
    }
    SECTION("no clamping for small fluctuation away from T = 1") {
        Rng rng = make_rng(3, "real2");
        const ChannelConfig ch(0.631, LogNormalParams(0.9, 0.0005), 0.01);
        std::size_t clamped = 0;
        for (int i = 0; i < 100000; ++i)
            clamped += realize_subchannel(ch, PhaseNoiseConfig::from_variance(0.0), det, rng).clamped;
        CHECK(clamped == 0);
    }
    SECTION("transmittance never exceeds 1") {
        Rng rng = make_rng(4, "real3");
        const ChannelConfig ch(0.97, GammaGammaParams(4.0, 2.0), 0.01);
        for (int i = 0; i < 20000; ++i) {
            const auto r = realize_subchannel(ch, PhaseNoiseConfig::from_variance(0.0), det, rng);
            CHECK(r.transmittance <= 1.0);
            CHECK(r.transmittance > 0.0);
        }
    }
}
