#pragma once

#include <stdexcept>

namespace cvqkd {

/// Homodyne detector constants, shot-noise normalized (N0 = 1 SNU after
/// calibration). Part of the signal-chain but shared with the channel
/// realization, hence its own header.
struct DetectorModel {
    double eta = 0.6;     // detection efficiency, (0, 1]
    double nu_el = 0.01;  // electronic noise, SNU
    double n0 = 1.0;      // shot noise unit

    DetectorModel() = default;
    DetectorModel(double eta_, double nu_el_, double n0_ = 1.0) : eta(eta_), nu_el(nu_el_), n0(n0_) {
        if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("DetectorModel: eta must be in (0,1]");
        if (nu_el < 0.0) throw std::invalid_argument("DetectorModel: nu_el must be >= 0");
        if (!(n0 > 0.0)) throw std::invalid_argument("DetectorModel: n0 must be > 0");
    }
};

}  // namespace cvqkd
