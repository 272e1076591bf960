#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "classifier.hpp"
#include "equalizer.hpp"
#include "estimation.hpp"
#include "security.hpp"
#include "signal.hpp"

namespace cvqkd {

using nlohmann::json;

/// Value-exact decimal rendering (17 significant digits).
inline std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Model checkpoint: {mode, hidden_size, t_th_target, w_in, b_in, w_out, b_out}
// ---------------------------------------------------------------------------

inline json model_to_json(const EqualizerModel& m) {
    return json{{"mode", m.mode == EqualizerMode::Linear ? "linear" : "one-hidden"},
                {"hidden_size", m.hidden_size},
                {"t_th_target", m.t_th_target},
                {"w_in", m.w_in},
                {"b_in", m.b_in},
                {"w_out", m.w_out},
                {"b_out", m.b_out}};
}

inline EqualizerModel model_from_json(const json& j) {
    EqualizerModel m;
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "linear")
        m.mode = EqualizerMode::Linear;
    else if (mode == "one-hidden")
        m.mode = EqualizerMode::OneHidden;
    else
        throw std::runtime_error("model_from_json: unknown mode '" + mode + "'");
    m.hidden_size = j.at("hidden_size").get<int>();
    m.t_th_target = j.at("t_th_target").get<double>();
    m.w_in = j.at("w_in").get<std::vector<double>>();
    m.b_in = j.at("b_in").get<std::vector<double>>();
    m.w_out = j.at("w_out").get<std::vector<double>>();
    m.b_out = j.at("b_out").get<double>();
    return m;
}

/// Loss history CSV: epoch, train_loss, val_loss.
inline void save_loss_history(const std::string& path, const TrainReport& r) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_loss_history: cannot open " + path);
    out << "epoch,train_loss,val_loss\n";
    for (std::size_t e = 0; e < r.loss_history.size(); ++e)
        out << e + 1 << ',' << fmt17(r.loss_history[e]) << ',' << fmt17(r.val_loss_history[e]) << '\n';
}

// ---------------------------------------------------------------------------
// Classifier artifacts
// ---------------------------------------------------------------------------

inline json zones_to_json(const EllipseZones& z) {
    return json{{"mean", z.mean},
                {"cov", {z.cov[0], z.cov[1]}},
                {"k1", z.k1},
                {"k2", z.k2},
                {"k3", z.k3}};
}

inline json knn_to_json(const KnnModel& m) {
    std::vector<int> labels;
    labels.reserve(m.labels.size());
    for (auto l : m.labels) labels.push_back(static_cast<int>(l));
    return json{{"k", m.k},
                {"feat_mean", m.feat_mean},
                {"feat_scale", m.feat_scale},
                {"features", m.features},
                {"labels", labels}};
}

inline KnnModel knn_from_json(const json& j) {
    KnnModel m;
    m.k = j.at("k").get<int>();
    m.feat_mean = j.at("feat_mean").get<Feature2>();
    m.feat_scale = j.at("feat_scale").get<Feature2>();
    m.features = j.at("features").get<std::vector<Feature2>>();
    for (int v : j.at("labels").get<std::vector<int>>()) m.labels.push_back(static_cast<QualityLabel>(v));
    return m;
}

inline json class_report_to_json(const ClassReport& r) {
    return json{{"confusion", {r.confusion[0], r.confusion[1], r.confusion[2]}},
                {"per_class_tpr", r.per_class_tpr},
                {"per_class_fnr", r.per_class_fnr},
                {"per_class_auc", r.per_class_auc},
                {"accuracy", r.accuracy}};
}

/// Label dataset CSV: x, y, mahalanobis_d, label.
struct LabeledPoint {
    Feature2 feature;
    double mahalanobis_d;
    QualityLabel label;
};

inline void save_labels(const std::string& path, std::span<const LabeledPoint> rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_labels: cannot open " + path);
    out << "x,y,mahalanobis_d,label\n";
    for (const auto& r : rows)
        out << fmt17(r.feature[0]) << ',' << fmt17(r.feature[1]) << ',' << fmt17(r.mahalanobis_d) << ','
            << to_string(r.label) << '\n';
}

// ---------------------------------------------------------------------------
// Estimation / key-rate reports
// ---------------------------------------------------------------------------

inline json estimate_to_json(const SubChannelEstimate& e) {
    return json{{"m", e.m},          {"t_hat", e.t_hat},
                {"dt", e.t_half_width}, {"sigma2_hat", e.sigma2_hat},
                {"dsigma", e.sigma_half_width}, {"T_hat", e.T_hat},
                {"eps_hat", e.eps_hat}, {"clamped", e.eps_clamped}};
}

inline json keyrate_to_json(const KeyRateReport& r) {
    return json{{"i_ab", r.i_ab},     {"chi_be", r.chi_be}, {"k_rate", r.k_rate},
                {"k_raw", r.k_raw},   {"beta_r", r.beta_r}, {"fer", r.fer},
                {"delta_n", r.delta_n}};
}

// ---------------------------------------------------------------------------
// Pulse dataset CSV: frame_index, kind, modulated_value, s0..s7, osp_value
// ---------------------------------------------------------------------------

struct DatasetRow {
    std::size_t frame_index = 0;
    SlotKind kind = SlotKind::Pilot;
    double modulated_value = 0.0;
    std::array<double, kPulseLength> samples{};
    double osp_value = 0.0;
};

inline void save_dataset(const std::string& path, std::span<const DatasetRow> rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
    out << "frame_index,kind,modulated_value,s0,s1,s2,s3,s4,s5,s6,s7,osp_value\n";
    for (const auto& r : rows) {
        out << r.frame_index << ',' << (r.kind == SlotKind::Pilot ? "pilot" : "signal") << ','
            << fmt17(r.modulated_value);
        for (double s : r.samples) out << ',' << fmt17(s);
        out << ',' << fmt17(r.osp_value) << '\n';
    }
}

inline std::vector<DatasetRow> load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_dataset: empty file (missing header)");
    if (line != "frame_index,kind,modulated_value,s0,s1,s2,s3,s4,s5,s6,s7,osp_value")
        throw std::runtime_error("load_dataset: line 1: unexpected header");
    std::vector<DatasetRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::vector<std::string> fields;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (fields.size() != 12)
            throw std::runtime_error("load_dataset: line " + std::to_string(lineno) + ": expected 12 fields, got " +
                                     std::to_string(fields.size()));
        DatasetRow r;
        try {
            r.frame_index = std::stoull(fields[0]);
            if (fields[1] == "pilot")
                r.kind = SlotKind::Pilot;
            else if (fields[1] == "signal")
                r.kind = SlotKind::Signal;
            else
                throw std::invalid_argument("bad kind '" + fields[1] + "'");
            r.modulated_value = std::stod(fields[2]);
            for (int k = 0; k < kPulseLength; ++k) r.samples[k] = std::stod(fields[3 + k]);
            r.osp_value = std::stod(fields[11]);
        } catch (const std::exception& e) {
            throw std::runtime_error("load_dataset: line " + std::to_string(lineno) + ": " + e.what());
        }
        rows.push_back(r);
    }
    return rows;
}

}  // namespace cvqkd
