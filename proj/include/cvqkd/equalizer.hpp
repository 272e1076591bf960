#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rng.hpp"
#include "signal.hpp"
#include "stats.hpp"

namespace cvqkd {

enum class EqualizerMode { Linear, OneHidden };

/// Pilot-driven correction network f(y) targeting y' = t_th * x.
/// Linear mode is the affine map w.y + b; OneHidden adds a tanh layer
/// (8 inputs, one hidden layer, 1 output).
struct EqualizerModel {
    EqualizerMode mode = EqualizerMode::OneHidden;
    int hidden_size = 16;
    double t_th_target = 1.0;              // sqrt(eta * T_th), in (0,1]
    std::vector<double> w_in;              // hidden_size x 8, row-major (Linear: 1 x 8)
    std::vector<double> b_in;              // hidden_size (Linear: empty)
    std::vector<double> w_out;             // hidden_size (Linear: {1}, not trained)
    double b_out = 0.0;
};

struct TrainReport {
    std::size_t epochs_run = 0;
    std::vector<double> loss_history;      // per-epoch training MSE, SNU
    std::vector<double> val_loss_history;
    double final_val_loss = 0.0;
    bool converged = false;
};

struct TrainHyper {
    double learning_rate = 1e-2;
    std::size_t epochs = 200;
    std::size_t batch = 64;
    double val_fraction = 0.2;
};

/// Retrain when the pilot residual RMS over the window exceeds the threshold.
struct RetrainPolicy {
    double residual_threshold;
    std::size_t window;

    RetrainPolicy(double threshold, std::size_t window_) : residual_threshold(threshold), window(window_) {
        if (!(residual_threshold > 0.0)) throw std::invalid_argument("RetrainPolicy: threshold must be > 0");
        if (window == 0) throw std::invalid_argument("RetrainPolicy: window must be >= 1");
    }
};

enum class RetrainDecision { Keep, Retrain };

using PilotSample = std::pair<PulseSamples, double>;  // (detected pulse, known pilot value)

inline EqualizerModel init_model(EqualizerMode mode, int hidden_size, double t_th, Rng& rng) {
    if (!(t_th > 0.0 && t_th <= 1.0)) throw std::invalid_argument("init_model: t_th must be in (0,1]");
    EqualizerModel m;
    m.mode = mode;
    m.t_th_target = t_th;
    if (mode == EqualizerMode::Linear) {
        m.hidden_size = 1;
        std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(8.0));
        m.w_in.resize(kPulseLength);
        for (auto& w : m.w_in) w = g(rng);
        m.w_out = {1.0};
    } else {
        if (hidden_size < 1) throw std::invalid_argument("init_model: hidden_size must be >= 1");
        m.hidden_size = hidden_size;
        std::normal_distribution<double> gi(0.0, 1.0 / std::sqrt(8.0));
        std::normal_distribution<double> go(0.0, 1.0 / std::sqrt(static_cast<double>(hidden_size)));
        m.w_in.resize(static_cast<std::size_t>(hidden_size) * kPulseLength);
        for (auto& w : m.w_in) w = gi(rng);
        m.b_in.assign(hidden_size, 0.0);
        m.w_out.resize(hidden_size);
        for (auto& w : m.w_out) w = go(rng);
    }
    m.b_out = 0.0;
    return m;
}

inline double forward(const EqualizerModel& m, const PulseSamples& pulse) {
    if (m.mode == EqualizerMode::Linear) {
        if (m.w_in.size() != kPulseLength) throw std::invalid_argument("forward: bad Linear weight shape");
        double acc = m.b_out;
        for (int k = 0; k < kPulseLength; ++k) acc += m.w_in[k] * pulse.samples[k];
        return acc;
    }
    if (m.w_in.size() != static_cast<std::size_t>(m.hidden_size) * kPulseLength ||
        m.b_in.size() != static_cast<std::size_t>(m.hidden_size) ||
        m.w_out.size() != static_cast<std::size_t>(m.hidden_size))
        throw std::invalid_argument("forward: inconsistent OneHidden shapes");
    double acc = m.b_out;
    for (int j = 0; j < m.hidden_size; ++j) {
        double pre = m.b_in[j];
        const double* row = m.w_in.data() + static_cast<std::size_t>(j) * kPulseLength;
        for (int k = 0; k < kPulseLength; ++k) pre += row[k] * pulse.samples[k];
        acc += m.w_out[j] * std::tanh(pre);
    }
    return acc;
}

namespace detail {

inline std::size_t trainable_count(const EqualizerModel& m) {
    if (m.mode == EqualizerMode::Linear) return kPulseLength + 1;  // w_in, b_out
    return m.w_in.size() + m.b_in.size() + m.w_out.size() + 1;
}

inline void pack_params(const EqualizerModel& m, std::vector<double>& out) {
    out.clear();
    out.insert(out.end(), m.w_in.begin(), m.w_in.end());
    if (m.mode == EqualizerMode::OneHidden) {
        out.insert(out.end(), m.b_in.begin(), m.b_in.end());
        out.insert(out.end(), m.w_out.begin(), m.w_out.end());
    }
    out.push_back(m.b_out);
}

inline void unpack_params(EqualizerModel& m, std::span<const double> in) {
    std::size_t p = 0;
    for (auto& w : m.w_in) w = in[p++];
    if (m.mode == EqualizerMode::OneHidden) {
        for (auto& b : m.b_in) b = in[p++];
        for (auto& w : m.w_out) w = in[p++];
    }
    m.b_out = in[p++];
}

/// Gradient of the single-sample squared error (f(y) - target)^2 with respect
/// to the trainable parameters, packed in pack_params order.
inline void backprop_sample(const EqualizerModel& m, const PulseSamples& y, double target,
                            std::vector<double>& grad, double scale = 1.0) {
    if (m.mode == EqualizerMode::Linear) {
        double f = m.b_out;
        for (int k = 0; k < kPulseLength; ++k) f += m.w_in[k] * y.samples[k];
        const double d = scale * 2.0 * (f - target);
        for (int k = 0; k < kPulseLength; ++k) grad[k] += d * y.samples[k];
        grad[kPulseLength] += d;
        return;
    }
    const int h = m.hidden_size;
    thread_local std::vector<double> act;
    act.resize(h);
    double f = m.b_out;
    for (int j = 0; j < h; ++j) {
        double pre = m.b_in[j];
        const double* row = m.w_in.data() + static_cast<std::size_t>(j) * kPulseLength;
        for (int k = 0; k < kPulseLength; ++k) pre += row[k] * y.samples[k];
        act[j] = std::tanh(pre);
        f += m.w_out[j] * act[j];
    }
    const double d = scale * 2.0 * (f - target);
    const std::size_t off_b_in = m.w_in.size();
    const std::size_t off_w_out = off_b_in + m.b_in.size();
    const std::size_t off_b_out = off_w_out + m.w_out.size();
    for (int j = 0; j < h; ++j) {
        const double dpre = d * m.w_out[j] * (1.0 - act[j] * act[j]);
        double* grow = grad.data() + static_cast<std::size_t>(j) * kPulseLength;
        for (int k = 0; k < kPulseLength; ++k) grow[k] += dpre * y.samples[k];
        grad[off_b_in + j] += dpre;
        grad[off_w_out + j] += d * act[j];
    }
    grad[off_b_out] += d;
}

inline double dataset_mse(const EqualizerModel& m, std::span<const PulseSamples> ys,
                          std::span<const double> targets, std::span<const std::size_t> idx) {
    double s = 0.0;
    for (std::size_t i : idx) {
        const double r = forward(m, ys[i]) - targets[i];
        s += r * r;
    }
    return idx.empty() ? 0.0 : s / static_cast<double>(idx.size());
}

}  // namespace detail

/// Mini-batch gradient descent on the mean squared error between forward(y)
/// and t_th * pilot_x. Inputs and targets are standardized internally (the
/// scales fold back into the returned weights exactly, for both modes), so
/// the default learning rate behaves the same at pilot and signal amplitudes.
/// Deterministic for a fixed (model, data, hyper, seed).
inline std::pair<EqualizerModel, TrainReport> train(const EqualizerModel& model,
                                                    std::span<const PilotSample> pilots,
                                                    const TrainHyper& hyper, Rng& rng) {
    if (pilots.size() < 100) throw std::invalid_argument("train: need at least 100 pilot pairs");
    if (hyper.batch == 0 || hyper.epochs == 0) throw std::invalid_argument("train: bad hyperparameters");
    if (!(hyper.val_fraction >= 0.0 && hyper.val_fraction < 1.0))
        throw std::invalid_argument("train: val_fraction must be in [0,1)");

    const std::size_t n = pilots.size();
    std::vector<PulseSamples> ys(n);
    std::vector<double> targets(n);
    double y_ss = 0.0, t_ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ys[i] = pilots[i].first;
        targets[i] = model.t_th_target * pilots[i].second;
        for (double v : ys[i].samples) y_ss += v * v;
        t_ss += targets[i] * targets[i];
    }
    const double y_scale = std::max(std::sqrt(y_ss / (n * kPulseLength)), 1e-12);
    const double t_scale = std::max(std::sqrt(t_ss / n), 1e-12);
    for (auto& y : ys)
        for (auto& v : y.samples) v /= y_scale;
    for (auto& t : targets) t /= t_scale;

    // Map the incoming model into standardized space; inverse-folded on exit.
    EqualizerModel m = model;
    if (m.mode == EqualizerMode::Linear) {
        for (auto& w : m.w_in) w *= y_scale / t_scale;
        m.b_out /= t_scale;
    } else {
        for (auto& w : m.w_in) w *= y_scale;
        for (auto& w : m.w_out) w /= t_scale;
        m.b_out /= t_scale;
    }

    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_val = static_cast<std::size_t>(std::floor(hyper.val_fraction * n));
    std::vector<std::size_t> val_idx(idx.begin(), idx.begin() + n_val);
    std::vector<std::size_t> train_idx(idx.begin() + n_val, idx.end());

    std::vector<double> grad(detail::trainable_count(m));
    TrainReport report;
    report.loss_history.reserve(hyper.epochs);
    report.val_loss_history.reserve(hyper.epochs);

    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        for (std::size_t start = 0; start < train_idx.size(); start += hyper.batch) {
            const std::size_t stop = std::min(start + hyper.batch, train_idx.size());
            std::fill(grad.begin(), grad.end(), 0.0);
            const double inv = 1.0 / static_cast<double>(stop - start);
            for (std::size_t b = start; b < stop; ++b)
                detail::backprop_sample(m, ys[train_idx[b]], targets[train_idx[b]], grad, inv);
            std::size_t p = 0;
            for (auto& w : m.w_in) w -= hyper.learning_rate * grad[p++];
            if (m.mode == EqualizerMode::OneHidden) {
                for (auto& b : m.b_in) b -= hyper.learning_rate * grad[p++];
                for (auto& w : m.w_out) w -= hyper.learning_rate * grad[p++];
            }
            m.b_out -= hyper.learning_rate * grad[p++];
        }
        const double train_loss = detail::dataset_mse(m, ys, targets, train_idx);
        const double val_loss =
            val_idx.empty() ? train_loss : detail::dataset_mse(m, ys, targets, val_idx);
        if (!std::isfinite(train_loss) || !std::isfinite(val_loss))
            throw std::runtime_error("train: aborted, non-finite loss (reduce learning rate)");
        report.loss_history.push_back(train_loss * t_scale * t_scale);
        report.val_loss_history.push_back(val_loss * t_scale * t_scale);
        report.epochs_run = epoch + 1;
    }
    report.final_val_loss = report.val_loss_history.back();
    const std::size_t tail = std::max<std::size_t>(5, hyper.epochs / 10);
    if (report.loss_history.size() > tail) {
        const double before = report.loss_history[report.loss_history.size() - tail - 1];
        const double after = report.loss_history.back();
        report.converged = (before - after) <= 1e-4 * std::max(before, 1e-30);
    } else {
        report.converged = false;
    }

    // Fold the standardization back into natural units.
    if (m.mode == EqualizerMode::Linear) {
        for (auto& w : m.w_in) w *= t_scale / y_scale;
        m.b_out *= t_scale;
    } else {
        for (auto& w : m.w_in) w /= y_scale;
        for (auto& w : m.w_out) w *= t_scale;
        m.b_out *= t_scale;
    }
    return {std::move(m), std::move(report)};
}

/// Worst relative discrepancy between backpropagation and central finite
/// differences (step 1e-5) over every trainable parameter, for the
/// single-sample loss (f(y) - t_th x)^2.
inline double gradient_check(const EqualizerModel& model, const PulseSamples& pulse, double pilot_x) {
    const double target = model.t_th_target * pilot_x;
    std::vector<double> analytic(detail::trainable_count(model), 0.0);
    detail::backprop_sample(model, pulse, target, analytic);

    std::vector<double> params;
    detail::pack_params(model, params);
    EqualizerModel probe = model;
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + h;
        detail::unpack_params(probe, params);
        const double rp = forward(probe, pulse) - target;
        params[i] = saved - h;
        detail::unpack_params(probe, params);
        const double rm = forward(probe, pulse) - target;
        params[i] = saved;
        const double numeric = (rp * rp - rm * rm) / (2.0 * h);
        const double rel = std::fabs(analytic[i] - numeric) /
                           std::max({std::fabs(analytic[i]), std::fabs(numeric), 1.0});
        worst = std::max(worst, rel);
    }
    detail::unpack_params(probe, params);
    return worst;
}

/// Retrain iff the RMS pilot residual over the trailing window exceeds the
/// policy threshold.
inline RetrainDecision residual_check(const EqualizerModel& model, std::span<const PilotSample> recent,
                                      const RetrainPolicy& policy) {
    if (policy.window > recent.size())
        throw std::invalid_argument("residual_check: window exceeds available pilots");
    double ss = 0.0;
    for (std::size_t i = recent.size() - policy.window; i < recent.size(); ++i) {
        const double r = forward(model, recent[i].first) - model.t_th_target * recent[i].second;
        ss += r * r;
    }
    const double rms = std::sqrt(ss / static_cast<double>(policy.window));
    return rms > policy.residual_threshold ? RetrainDecision::Retrain : RetrainDecision::Keep;
}

/// Elementwise correction of signal pulses with coefficients trained on the
/// pilots of the same stage.
inline std::vector<double> apply(const EqualizerModel& model, std::span<const PulseSamples> pulses) {
    std::vector<double> out;
    out.reserve(pulses.size());
    for (const auto& p : pulses) out.push_back(forward(model, p));
    return out;
}

/// Variance gain of the correction map on detector noise (shot + electronic):
/// the ratio Var(f(noise pulse)) / noise_var. Exact for Linear; Monte Carlo
/// for OneHidden. Equalized parameter estimation references N0 and nu_el
/// through this gain, since applying a known map rescales the vacuum
/// calibration along with the data.
inline double noise_gain(const EqualizerModel& model, double noise_var, Rng& rng,
                         std::size_t n_cal = 20000) {
    if (!(noise_var > 0.0)) throw std::invalid_argument("noise_gain: noise variance must be > 0");
    if (model.mode == EqualizerMode::Linear) {
        double ss = 0.0;
        for (double w : model.w_in) ss += w * w;
        return ss;
    }
    std::normal_distribution<double> noise(0.0, std::sqrt(noise_var));
    std::vector<double> vals(n_cal);
    PulseSamples p;
    for (std::size_t i = 0; i < n_cal; ++i) {
        for (auto& s : p.samples) s = noise(rng);
        vals[i] = forward(model, p);
    }
    return sample_variance(vals) / noise_var;
}

}  // namespace cvqkd
