#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "channel.hpp"
#include "detector.hpp"
#include "rng.hpp"

namespace cvqkd {

inline constexpr int kPulseLength = 8;
inline constexpr int kOspIndex = 4;

/// Half-sine pulse profile, normalized so the optimum sampling point
/// (index 4) equals 1: g_k = sin(pi k / 8).
inline const std::array<double, kPulseLength>& pulse_profile() {
    static const std::array<double, kPulseLength> g = [] {
        std::array<double, kPulseLength> a{};
        for (int k = 0; k < kPulseLength; ++k) a[k] = std::sin(M_PI * k / kPulseLength);
        return a;
    }();
    return g;
}

/// Energy of the profile, sum g_k^2.
inline double pulse_profile_energy() {
    static const double e = [] {
        double s = 0.0;
        for (double g : pulse_profile()) s += g * g;
        return s;
    }();
    return e;
}

struct ProtocolParams {
    double v_a;            // modulation variance V_A, SNU
    double v_total;        // V = V_A + 1
    double pilot_x;        // public pilot quadrature scale (X_P)
    double pilot_p;        // conjugate pilot quadrature (P_P)

    ProtocolParams(double v_a_, double pilot_x_, double pilot_p_ = 0.0)
        : v_a(v_a_), v_total(v_a_ + 1.0), pilot_x(pilot_x_), pilot_p(pilot_p_) {
        if (!(v_a > 0.0)) throw std::invalid_argument("ProtocolParams: V_A must be > 0");
    }
};

struct PulseSamples {
    std::array<double, kPulseLength> samples{};
    double sample_interval = 1.0;
    int osp_index = kOspIndex;
};

enum class SlotKind { Pilot, Signal };

struct FrameSlot {
    SlotKind kind;
    double modulated_value;
    PulseSamples pulse;  // filled after detection
};

/// n i.i.d. pairs of quadratures, each N(0, V_A).
inline std::vector<std::pair<double, double>> modulate_gmcs(const ProtocolParams& params, std::size_t n,
                                                            Rng& rng) {
    if (n == 0) throw std::invalid_argument("modulate_gmcs: empty request");
    std::normal_distribution<double> g(0.0, std::sqrt(params.v_a));
    std::vector<std::pair<double, double>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x = g(rng);
        const double p = g(rng);
        out.emplace_back(x, p);
    }
    return out;
}

/// Interleave pilots and signals: even slots Pilot, odd slots Signal.
/// Pilot slots carry the public pilot value.
inline std::vector<FrameSlot> build_frame(std::span<const double> symbols, const ProtocolParams& params) {
    if (symbols.empty()) throw std::invalid_argument("build_frame: no symbols");
    std::vector<FrameSlot> frame;
    frame.reserve(2 * symbols.size());
    for (double s : symbols) {
        frame.push_back({SlotKind::Pilot, params.pilot_x, {}});
        frame.push_back({SlotKind::Signal, s, {}});
    }
    return frame;
}

/// Variant with an explicit public pilot sequence (one value per pilot slot).
/// A strictly constant pilot makes equalizer training degenerate, so the
/// experiment pipeline interleaves a seeded, publicly reproducible sequence.
inline std::vector<FrameSlot> build_frame(std::span<const double> symbols,
                                          std::span<const double> pilot_values) {
    if (symbols.empty()) throw std::invalid_argument("build_frame: no symbols");
    if (pilot_values.size() != symbols.size())
        throw std::invalid_argument("build_frame: pilot/symbol count mismatch");
    std::vector<FrameSlot> frame;
    frame.reserve(2 * symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
        frame.push_back({SlotKind::Pilot, pilot_values[i], {}});
        frame.push_back({SlotKind::Signal, symbols[i], {}});
    }
    return frame;
}

inline std::vector<double> deinterleave_signals(std::span<const FrameSlot> frame) {
    std::vector<double> out;
    out.reserve(frame.size() / 2);
    for (std::size_t i = 1; i < frame.size(); i += 2) out.push_back(frame[i].modulated_value);
    return out;
}

/// samples_k = value * g_k; linear in value, sample[4] = value.
inline PulseSamples shape_pulse(double value) {
    if (!std::isfinite(value)) throw std::invalid_argument("shape_pulse: non-finite value");
    PulseSamples p;
    const auto& g = pulse_profile();
    for (int k = 0; k < kPulseLength; ++k) p.samples[k] = value * g[k];
    return p;
}

inline double optimum_sample(const PulseSamples& pulse) {
    if (pulse.osp_index < 0 || pulse.osp_index >= kPulseLength)
        throw std::invalid_argument("optimum_sample: bad OSP index");
    return pulse.samples[pulse.osp_index];
}

/// Homodyne detection of one quadrature through a realized sub-channel:
///   out_k = sqrt(eta T) [ cos(dphi) in_k - sin(dphi) conj_value g_k ] + w_k
/// with w_k i.i.d. N(0, sigma^2), sigma^2 the realization's noise variance
/// (so the OSP sample obeys y = t x + z with t = sqrt(eta T) at dphi = 0).
/// The conjugate quadrature of the pulse leaks in under phase drift; pass 0
/// when the pulse carries a single quadrature.
inline PulseSamples detect_homodyne(const PulseSamples& pulse, double conj_value,
                                    const ChannelRealization& real, const DetectorModel& det, Rng& rng) {
    const double t_amp = std::sqrt(det.eta * real.transmittance);
    const double c = std::cos(real.phase_drift);
    const double s = std::sin(real.phase_drift);
    const auto& g = pulse_profile();
    PulseSamples out = pulse;
    if (real.noise_var > 0.0) {
        std::normal_distribution<double> noise(0.0, std::sqrt(real.noise_var));
        for (int k = 0; k < kPulseLength; ++k)
            out.samples[k] = t_amp * (c * pulse.samples[k] - s * conj_value * g[k]) + noise(rng);
    } else {
        for (int k = 0; k < kPulseLength; ++k)
            out.samples[k] = t_amp * (c * pulse.samples[k] - s * conj_value * g[k]);
    }
    return out;
}

inline PulseSamples detect_homodyne(const PulseSamples& pulse, const ChannelRealization& real,
                                    const DetectorModel& det, Rng& rng) {
    return detect_homodyne(pulse, 0.0, real, det, rng);
}

}  // namespace cvqkd
