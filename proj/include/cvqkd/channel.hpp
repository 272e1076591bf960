#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <stdexcept>
#include <variant>

#include "detector.hpp"
#include "rng.hpp"

namespace cvqkd {

// ---------------------------------------------------------------------------
// Deterministic attenuation laws
// ---------------------------------------------------------------------------

struct FiberConfig {
    double alpha_db_per_km = 0.2;
    double length_km = 10.0;

    FiberConfig() = default;
    FiberConfig(double alpha, double length) : alpha_db_per_km(alpha), length_km(length) {
        if (alpha_db_per_km < 0.0) throw std::invalid_argument("FiberConfig: attenuation must be >= 0");
        if (length_km < 0.0) throw std::invalid_argument("FiberConfig: length must be >= 0");
    }
};

/// T = 10^(-alpha_f * L / 10)
inline double fiber_transmittance(const FiberConfig& cfg) {
    return std::pow(10.0, -cfg.alpha_db_per_km * cfg.length_km / 10.0);
}

struct FreeSpaceConfig {
    double alpha_db_per_km = 2.0;          // atmospheric decay coefficient
    double length_km = 1.0;
    std::optional<double> visibility_km;   // air visibility V, for the empirical alpha formula
    double wavelength_um = 0.8;
    double q_exponent = 1.3;

    FreeSpaceConfig() = default;
    FreeSpaceConfig(double alpha, double length, std::optional<double> visibility = std::nullopt,
                    double wavelength = 0.8, double q = 1.3)
        : alpha_db_per_km(alpha), length_km(length), visibility_km(visibility),
          wavelength_um(wavelength), q_exponent(q) {
        if (alpha_db_per_km < 0.0 || length_km < 0.0 || q_exponent < 0.0)
            throw std::invalid_argument("FreeSpaceConfig: negative parameter");
        if (!(wavelength_um > 0.0)) throw std::invalid_argument("FreeSpaceConfig: wavelength must be > 0");
        if (visibility_km && *visibility_km < 0.0)
            throw std::invalid_argument("FreeSpaceConfig: negative visibility");
    }
};

/// Beer-Lambert law T = exp(-alpha_nat * L); the dB/km coefficient converts
/// as alpha_nat = alpha_dB * ln(10) / 10.
inline double free_space_transmittance(const FreeSpaceConfig& cfg) {
    const double alpha_nat = cfg.alpha_db_per_km * std::log(10.0) / 10.0;
    return std::exp(-alpha_nat * cfg.length_km);
}

/// Empirical visibility formula alpha = (3.91/V) * (lambda/0.55)^(-q), dB/km.
inline double attenuation_from_visibility(const FreeSpaceConfig& cfg) {
    if (!cfg.visibility_km || !(*cfg.visibility_km > 0.0))
        throw std::domain_error("attenuation_from_visibility: visibility must be > 0");
    return 3.91 / *cfg.visibility_km * std::pow(cfg.wavelength_um / 0.55, -cfg.q_exponent);
}

// ---------------------------------------------------------------------------
// Fading models
// ---------------------------------------------------------------------------

/// Gamma-Gamma fading of unit mean: I = Ix * Iy with Ix ~ Gamma(alpha, 1/alpha),
/// Iy ~ Gamma(beta, 1/beta). Scintillation index 1/alpha + 1/beta + 1/(alpha*beta).
struct GammaGammaParams {
    double alpha_eff;
    double beta_eff;
    double sigma2_lnx = 0.0;
    double sigma2_lny = 0.0;

    GammaGammaParams(double alpha, double beta) : alpha_eff(alpha), beta_eff(beta) {
        if (!(alpha_eff > 0.0 && beta_eff > 0.0))
            throw std::invalid_argument("GammaGammaParams: effective numbers must be > 0");
    }
};

/// alpha = [exp(s2_lnx) - 1]^-1, beta = [exp(s2_lny) - 1]^-1.
inline GammaGammaParams gg_params_from_log_variances(double sigma2_lnx, double sigma2_lny) {
    if (!(sigma2_lnx > 0.0 && sigma2_lny > 0.0))
        throw std::domain_error("gg_params_from_log_variances: log variances must be > 0");
    GammaGammaParams p(1.0 / std::expm1(sigma2_lnx), 1.0 / std::expm1(sigma2_lny));
    p.sigma2_lnx = sigma2_lnx;
    p.sigma2_lny = sigma2_lny;
    return p;
}

/// Log-normal intensity: ln I ~ N(ln<I> - s2/2, s2), so E[I] = mean_intensity.
/// scint_index is the log-domain variance.
struct LogNormalParams {
    double mean_intensity;
    double scint_index;

    LogNormalParams(double mean, double s2) : mean_intensity(mean), scint_index(s2) {
        if (!(mean_intensity > 0.0 && mean_intensity <= 1.0))
            throw std::invalid_argument("LogNormalParams: mean intensity must be in (0,1]");
        if (scint_index < 0.0) throw std::invalid_argument("LogNormalParams: negative variance");
    }
};

struct NoFading {};

/// Gamma-Gamma scintillation interrupted by beam-wander outages: with
/// probability outage_prob the beam walks off the aperture and only
/// outage_intensity is collected; otherwise the unit-mean Gamma-Gamma core
/// applies. E[I] = (1 - p) + p * I_out.
struct OutageMixture {
    double outage_prob;
    double outage_intensity;
    GammaGammaParams core;

    OutageMixture(double prob, double intensity, GammaGammaParams core_)
        : outage_prob(prob), outage_intensity(intensity), core(core_) {
        if (!(outage_prob >= 0.0 && outage_prob < 1.0))
            throw std::invalid_argument("OutageMixture: outage probability must be in [0,1)");
        if (!(outage_intensity > 0.0 && outage_intensity <= 1.0))
            throw std::invalid_argument("OutageMixture: outage intensity must be in (0,1]");
    }
};

using FadingDist = std::variant<NoFading, LogNormalParams, GammaGammaParams, OutageMixture>;

inline double sample_intensity(const LogNormalParams& p, Rng& rng) {
    if (p.scint_index == 0.0) return p.mean_intensity;
    const double mu = std::log(p.mean_intensity) - 0.5 * p.scint_index;
    std::normal_distribution<double> n(mu, std::sqrt(p.scint_index));
    return std::exp(n(rng));
}

inline double sample_intensity(const GammaGammaParams& p, Rng& rng) {
    std::gamma_distribution<double> gx(p.alpha_eff, 1.0 / p.alpha_eff);
    std::gamma_distribution<double> gy(p.beta_eff, 1.0 / p.beta_eff);
    return gx(rng) * gy(rng);
}

inline double sample_intensity(const OutageMixture& p, Rng& rng) {
    std::bernoulli_distribution out(p.outage_prob);
    if (out(rng)) return p.outage_intensity;
    return sample_intensity(p.core, rng);
}

inline double sample_intensity(const FadingDist& dist, Rng& rng) {
    return std::visit(
        [&rng](const auto& p) -> double {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, NoFading>)
                return 1.0;
            else
                return sample_intensity(p, rng);
        },
        dist);
}

/// Exact first and second sqrt-intensity moments (E[sqrt(I)], E[I]).
/// Reference values for sweeps and cross-checks of the sampled moments.
struct IntensityMoments {
    double e_sqrt;
    double e_mean;
};

namespace detail {

// E[Ix^(1/2)] = Gamma(a+1/2) / (Gamma(a) sqrt(a)) per Gamma factor
inline double gg_sqrt_moment(const GammaGammaParams& p) {
    const double ex =
        std::exp(std::lgamma(p.alpha_eff + 0.5) - std::lgamma(p.alpha_eff)) / std::sqrt(p.alpha_eff);
    const double ey =
        std::exp(std::lgamma(p.beta_eff + 0.5) - std::lgamma(p.beta_eff)) / std::sqrt(p.beta_eff);
    return ex * ey;
}

}  // namespace detail

inline IntensityMoments intensity_moments(const FadingDist& dist) {
    return std::visit(
        [](const auto& p) -> IntensityMoments {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, NoFading>) {
                return {1.0, 1.0};
            } else if constexpr (std::is_same_v<T, LogNormalParams>) {
                return {std::sqrt(p.mean_intensity) * std::exp(-p.scint_index / 8.0), p.mean_intensity};
            } else if constexpr (std::is_same_v<T, GammaGammaParams>) {
                return {detail::gg_sqrt_moment(p), 1.0};
            } else {
                const double w = p.outage_prob;
                return {(1.0 - w) * detail::gg_sqrt_moment(p.core) + w * std::sqrt(p.outage_intensity),
                        (1.0 - w) + w * p.outage_intensity};
            }
        },
        dist);
}

// ---------------------------------------------------------------------------
// Phase fluctuation
// ---------------------------------------------------------------------------

/// Gaussian phase drift of variance sigma2_phase. The Zernike form
/// sigma2 = C_J (2a/d0)^2 ties the variance to aperture and coherence diameter.
struct PhaseNoiseConfig {
    double c_j = 0.0;
    double aperture_radius_m = 0.0;
    double coherence_diameter_m = 0.0;
    double sigma2_phase = 0.0;

    static PhaseNoiseConfig zernike(double c_j, double aperture_radius_m, double coherence_diameter_m) {
        if (!(c_j > 0.0 && aperture_radius_m > 0.0))
            throw std::invalid_argument("PhaseNoiseConfig: C_J and aperture must be > 0");
        if (!(coherence_diameter_m > 0.0))
            throw std::domain_error("PhaseNoiseConfig: coherence diameter must be > 0");
        PhaseNoiseConfig cfg;
        cfg.c_j = c_j;
        cfg.aperture_radius_m = aperture_radius_m;
        cfg.coherence_diameter_m = coherence_diameter_m;
        cfg.sigma2_phase = c_j * std::pow(2.0 * aperture_radius_m / coherence_diameter_m, 2.0);
        return cfg;
    }

    static PhaseNoiseConfig from_variance(double sigma2) {
        if (sigma2 < 0.0) throw std::invalid_argument("PhaseNoiseConfig: negative variance");
        PhaseNoiseConfig cfg;
        cfg.sigma2_phase = sigma2;
        return cfg;
    }
};

inline double phase_variance_zernike(const PhaseNoiseConfig& cfg) {
    if (!(cfg.coherence_diameter_m > 0.0))
        throw std::domain_error("phase_variance_zernike: coherence diameter must be > 0");
    return cfg.c_j * std::pow(2.0 * cfg.aperture_radius_m / cfg.coherence_diameter_m, 2.0);
}

inline double sample_phase_drift(const PhaseNoiseConfig& cfg, Rng& rng) {
    if (cfg.sigma2_phase == 0.0) return 0.0;
    std::normal_distribution<double> n(0.0, std::sqrt(cfg.sigma2_phase));
    return n(rng);
}

/// Characteristic function of the Gaussian phase density: M(w) = exp(-w^2 s2 / 2).
inline double char_function(double omega, double sigma2) {
    if (sigma2 < 0.0) throw std::invalid_argument("char_function: negative variance");
    return std::exp(-omega * omega * sigma2 / 2.0);
}

// ---------------------------------------------------------------------------
// Fluctuation moments
// ---------------------------------------------------------------------------

/// The five expectations entering the fluctuation-expanded estimators, with
/// A = sqrt(I): E[A cos], E[A sin], E[A^2 cos^2], E[A^2 sin^2], E[A^2].
struct FluctuationMoments {
    double e_a_cos;
    double e_a_sin;
    double e_a2_cos2;
    double e_a2_sin2;
    double e_a2;

    /// Moments of the intensity scaled by s (I -> s*I): sqrt terms pick up
    /// sqrt(s), quadratic terms pick up s.
    FluctuationMoments scaled_by_intensity(double s) const {
        const double rs = std::sqrt(s);
        return {e_a_cos * rs, e_a_sin * rs, e_a2_cos2 * s, e_a2_sin2 * s, e_a2 * s};
    }
};

enum class MomentMethod { MonteCarlo, SemiAnalytic };

/// Monte Carlo path: joint draws of (I, dphi), sample averages of the five
/// integrands. The trigonometric identity e_a2_cos2 + e_a2_sin2 = e_a2 holds
/// per draw, hence exactly for the averages.
/// Semi-analytic path: sampled intensity moments multiplied by the exact
/// characteristic-function factors; e_a_sin is identically 0 there (even
/// phase density, odd integrand).
inline FluctuationMoments fluctuation_moments(const FadingDist& dist, const PhaseNoiseConfig& phase,
                                              std::size_t n_samples, Rng& rng,
                                              MomentMethod method = MomentMethod::MonteCarlo) {
    if (n_samples < 10000)
        throw std::invalid_argument("fluctuation_moments: need at least 1e4 samples for stated precision");
    if (method == MomentMethod::SemiAnalytic) {
        double s_sqrt = 0.0, s_mean = 0.0;
        for (std::size_t i = 0; i < n_samples; ++i) {
            const double I = sample_intensity(dist, rng);
            s_sqrt += std::sqrt(I);
            s_mean += I;
        }
        const double e_sqrt = s_sqrt / static_cast<double>(n_samples);
        const double e_mean = s_mean / static_cast<double>(n_samples);
        const double s2 = phase.sigma2_phase;
        return {e_sqrt * char_function(1.0, s2), 0.0, e_mean * (1.0 + char_function(2.0, s2)) / 2.0,
                e_mean * (1.0 - char_function(2.0, s2)) / 2.0, e_mean};
    }
    double c1 = 0.0, s1 = 0.0, c2 = 0.0, s2sum = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const double I = sample_intensity(dist, rng);
        const double phi = sample_phase_drift(phase, rng);
        const double a = std::sqrt(I);
        const double c = std::cos(phi), s = std::sin(phi);
        c1 += a * c;
        s1 += a * s;
        c2 += I * c * c;
        s2sum += I * s * s;
        m2 += I;
    }
    const double n = static_cast<double>(n_samples);
    return {c1 / n, s1 / n, c2 / n, s2sum / n, m2 / n};
}

// ---------------------------------------------------------------------------
// Sub-channel realization
// ---------------------------------------------------------------------------

/// Stochastic channel description behind the frozen deterministic loss:
/// total transmittance factorizes as T = I * t_deterministic.
struct ChannelConfig {
    double t_deterministic = 1.0;  // fiber or free-space law output
    FadingDist fading = NoFading{};
    double eps_channel = 0.0;      // channel excess noise, SNU

    ChannelConfig() = default;
    ChannelConfig(double t_det, FadingDist fading_, double eps)
        : t_deterministic(t_det), fading(std::move(fading_)), eps_channel(eps) {
        if (!(t_deterministic > 0.0 && t_deterministic <= 1.0))
            throw std::invalid_argument("ChannelConfig: deterministic transmittance must be in (0,1]");
        if (eps_channel < 0.0) throw std::invalid_argument("ChannelConfig: negative excess noise");
    }
};

/// One quasi-static sub-channel draw: the ground truth behind y = t x + z.
struct ChannelRealization {
    double amp_attenuation;  // A_alpha = sqrt(I)
    double phase_drift;      // radians
    double transmittance;    // T in (0,1]
    double excess_noise;     // SNU
    double noise_var;        // sigma^2 = N0 + eta T eps + nu_el, SNU
    bool clamped = false;    // intensity draw pushed I * t_det above 1
};

inline ChannelRealization realize_subchannel(const ChannelConfig& ch, const PhaseNoiseConfig& phase,
                                             const DetectorModel& det, Rng& rng) {
    const double intensity = sample_intensity(ch.fading, rng);
    const double dphi = sample_phase_drift(phase, rng);
    double t = intensity * ch.t_deterministic;
    bool clamped = false;
    if (t > 1.0) {
        t = 1.0;
        clamped = true;
    }
    ChannelRealization r;
    r.amp_attenuation = std::sqrt(intensity);
    r.phase_drift = dphi;
    r.transmittance = t;
    r.excess_noise = ch.eps_channel;
    r.noise_var = det.n0 + det.eta * t * ch.eps_channel + det.nu_el;
    r.clamped = clamped;
    return r;
}

}  // namespace cvqkd
