#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "channel.hpp"
#include "stats.hpp"

namespace cvqkd {

struct EstimationConfig {
    double eps_pe;   // parameter-estimation failure probability
    double z_score;  // inverse-normal(1 - eps_pe/2)
    double eta;
    double nu_el;    // SNU
    double n0;       // SNU
    double v_a;      // SNU

    EstimationConfig(double eps_pe_, double eta_, double nu_el_, double n0_, double v_a_)
        : eps_pe(eps_pe_), eta(eta_), nu_el(nu_el_), n0(n0_), v_a(v_a_) {
        if (!(eps_pe > 0.0 && eps_pe < 1.0))
            throw std::invalid_argument("EstimationConfig: eps_pe must be in (0,1)");
        if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("EstimationConfig: eta must be in (0,1]");
        if (nu_el < 0.0 || !(n0 > 0.0) || !(v_a > 0.0))
            throw std::invalid_argument("EstimationConfig: bad noise/variance parameters");
        z_score = normal_quantile(1.0 - eps_pe / 2.0);
    }
};

/// Per-sub-channel estimate with confidence half-widths.
struct SubChannelEstimate {
    double t_hat = 0.0;
    double sigma2_hat = 0.0;      // SNU
    double t_half_width = 0.0;
    double sigma_half_width = 0.0;
    std::size_t m = 0;            // samples used
    double T_hat = 0.0;
    double eps_hat = 0.0;         // SNU
    bool eps_clamped = false;     // negative finite-sample estimate clamped to 0
};

/// Least-squares slope and residual variance of the linear channel model:
/// t_hat = sum(x y) / sum(x^2), sigma2_hat = mean((y - t_hat x)^2).
inline std::pair<double, double> mle_estimate(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw std::invalid_argument("mle_estimate: length mismatch");
    if (x.size() < 2) throw std::invalid_argument("mle_estimate: need at least 2 samples");
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    if (!(sxx > 0.0)) throw std::domain_error("mle_estimate: degenerate regressor (all-zero x)");
    const double t = sxy / sxx;
    double ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - t * x[i];
        ss += r * r;
    }
    return {t, ss / static_cast<double>(x.size())};
}

/// dt = z sqrt(sigma2 / (m V_A)); dsigma = z sigma2 sqrt(2) / sqrt(m)
/// (variance convention for the second width).
inline std::pair<double, double> confidence_interval(double sigma2_hat, std::size_t m,
                                                     const EstimationConfig& cfg) {
    if (m < 2) throw std::invalid_argument("confidence_interval: m must be >= 2");
    const double dm = static_cast<double>(m);
    const double dt = cfg.z_score * std::sqrt(sigma2_hat / (dm * cfg.v_a));
    const double ds = cfg.z_score * sigma2_hat * std::sqrt(2.0) / std::sqrt(dm);
    return {dt, ds};
}

struct DerivedParams {
    double T_hat;
    double eps_hat;
    bool clamped;
};

/// Inverts sigma^2 = N0 + eta T eps + nu_el: T = t^2/eta,
/// eps = (sigma2 - N0 - nu_el) / (eta T), clamped at 0 with a flag.
inline DerivedParams derive_params(double t_hat, double sigma2_hat, const EstimationConfig& cfg) {
    if (t_hat < 0.0) throw std::invalid_argument("derive_params: negative slope");
    const double T = t_hat * t_hat / cfg.eta;
    if (!(T > 0.0)) throw std::domain_error("derive_params: T = 0, excess noise undefined");
    double eps = (sigma2_hat - cfg.n0 - cfg.nu_el) / (cfg.eta * T);
    bool clamped = false;
    if (eps < 0.0) {
        eps = 0.0;
        clamped = true;
    }
    return {T, eps, clamped};
}

/// mle + confidence interval + parameter inversion in one pass.
inline SubChannelEstimate estimate_subchannel(std::span<const double> x, std::span<const double> y,
                                              const EstimationConfig& cfg) {
    SubChannelEstimate e;
    const auto [t, s2] = mle_estimate(x, y);
    e.t_hat = t;
    e.sigma2_hat = s2;
    e.m = x.size();
    const auto [dt, ds] = confidence_interval(s2, e.m, cfg);
    e.t_half_width = dt;
    e.sigma_half_width = ds;
    const auto d = derive_params(std::max(t, 0.0), s2, cfg);
    e.T_hat = d.T_hat;
    e.eps_hat = d.eps_hat;
    e.eps_clamped = d.clamped;
    return e;
}

struct AggregateEstimate {
    double T_mean = 0.0;
    double eps_mean = 0.0;
    std::vector<double> weights;
    std::vector<SubChannelEstimate> per_channel;
};

/// <T> = sum p_i T_i, eps = sum p_i eps_i over sub-channels.
inline AggregateEstimate aggregate_subchannels(std::vector<SubChannelEstimate> estimates,
                                               std::vector<double> weights) {
    if (estimates.size() != weights.size())
        throw std::invalid_argument("aggregate_subchannels: weight/estimate count mismatch");
    if (estimates.empty()) throw std::invalid_argument("aggregate_subchannels: empty input");
    double wsum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("aggregate_subchannels: negative weight");
        wsum += w;
    }
    if (std::fabs(wsum - 1.0) > 1e-12)
        throw std::invalid_argument("aggregate_subchannels: weights must sum to 1");
    AggregateEstimate a;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        a.T_mean += weights[i] * estimates[i].T_hat;
        a.eps_mean += weights[i] * estimates[i].eps_hat;
    }
    a.weights = std::move(weights);
    a.per_channel = std::move(estimates);
    return a;
}

/// Single-channel aggregate (p = 1).
inline AggregateEstimate as_aggregate(const SubChannelEstimate& e) {
    return aggregate_subchannels({e}, {1.0});
}

struct FluctuationEstimate {
    double t_hat_theory;  // sqrt(eta) * E[A cos dphi]
    double eps_floor;     // V_A { E[A^2cos^2]/E[Acos]^2 + E[A^2sin^2]/E[Acos]^2 - 1 }
};

/// Fluctuation-expanded estimators: the slope shrinks by the mean attenuated
/// cosine, and the bracketed moment term is the excess-noise floor added by
/// the channel fluctuation itself.
inline FluctuationEstimate fluctuation_estimators(const FluctuationMoments& m,
                                                  const EstimationConfig& cfg) {
    if (!(std::fabs(m.e_a_cos) > 0.0))
        throw std::domain_error("fluctuation_estimators: E[A cos] = 0, estimators degenerate");
    const double c2 = m.e_a_cos * m.e_a_cos;
    FluctuationEstimate r;
    r.t_hat_theory = std::sqrt(cfg.eta) * m.e_a_cos;
    r.eps_floor = cfg.v_a * (m.e_a2_cos2 / c2 + m.e_a2_sin2 / c2 - 1.0);
    return r;
}

}  // namespace cvqkd
