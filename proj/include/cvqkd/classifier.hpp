#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace cvqkd {

/// Received-variable quality classes. Smaller value = better quality; ties in
/// labeling and voting resolve toward the better class. Discard variables
/// never enter equalizer training, estimation, or key-rate accounting.
enum class QualityLabel : int { Excellent = 0, Ordinary = 1, Bad = 2, Discard = 3 };

inline const char* to_string(QualityLabel q) {
    switch (q) {
        case QualityLabel::Excellent: return "excellent";
        case QualityLabel::Ordinary: return "ordinary";
        case QualityLabel::Bad: return "bad";
        default: return "discard";
    }
}

using Feature2 = std::array<double, 2>;  // (known modulated value, measured OSP value)

struct ZoneThresholds {
    double k1 = 1.5;
    double k2 = 2.5;
    double k3 = 3.5;
};

/// Nested Mahalanobis shells fitted to the (x, y) scatter.
struct EllipseZones {
    Feature2 mean{};
    std::array<std::array<double, 2>, 2> cov{};
    std::array<std::array<double, 2>, 2> cov_inv{};
    double k1, k2, k3;
};

inline EllipseZones fit_ellipse_zones(std::span<const Feature2> pairs, const ZoneThresholds& th = {}) {
    if (!(th.k1 > 0.0 && th.k1 < th.k2 && th.k2 < th.k3))
        throw std::invalid_argument("fit_ellipse_zones: thresholds must satisfy 0 < k1 < k2 < k3");
    if (pairs.size() < 10) throw std::invalid_argument("fit_ellipse_zones: need at least 10 pairs");
    EllipseZones z;
    z.k1 = th.k1;
    z.k2 = th.k2;
    z.k3 = th.k3;
    const double n = static_cast<double>(pairs.size());
    for (const auto& p : pairs) {
        z.mean[0] += p[0];
        z.mean[1] += p[1];
    }
    z.mean[0] /= n;
    z.mean[1] /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& p : pairs) {
        const double dx = p[0] - z.mean[0], dy = p[1] - z.mean[1];
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    sxx /= n - 1.0;
    sxy /= n - 1.0;
    syy /= n - 1.0;
    z.cov = {{{sxx, sxy}, {sxy, syy}}};
    const double det = sxx * syy - sxy * sxy;
    const double scale = std::max(sxx, syy);
    if (!(det > 1e-12 * scale * scale))
        throw std::domain_error("fit_ellipse_zones: degenerate scatter (singular covariance)");
    z.cov_inv = {{{syy / det, -sxy / det}, {-sxy / det, sxx / det}}};
    return z;
}

inline double mahalanobis(const EllipseZones& z, const Feature2& p) {
    const double dx = p[0] - z.mean[0], dy = p[1] - z.mean[1];
    const double q = dx * (z.cov_inv[0][0] * dx + z.cov_inv[0][1] * dy) +
                     dy * (z.cov_inv[1][0] * dx + z.cov_inv[1][1] * dy);
    return std::sqrt(std::max(q, 0.0));
}

/// d <= k1 -> Excellent, <= k2 -> Ordinary, <= k3 -> Bad, else Discard.
inline QualityLabel label_point(const EllipseZones& z, const Feature2& p) {
    const double d = mahalanobis(z, p);
    if (d <= z.k1) return QualityLabel::Excellent;
    if (d <= z.k2) return QualityLabel::Ordinary;
    if (d <= z.k3) return QualityLabel::Bad;
    return QualityLabel::Discard;
}

/// Lazy KNN: training set stored verbatim, majority vote among the k
/// Euclidean-nearest points on standardized axes. Distance ties break toward
/// the lower training index, vote ties toward the better class.
struct KnnModel {
    std::vector<Feature2> features;
    std::vector<QualityLabel> labels;
    int k = 5;
    Feature2 feat_mean{};
    Feature2 feat_scale{1.0, 1.0};
};

inline KnnModel knn_fit(std::vector<Feature2> features, std::vector<QualityLabel> labels, int k = 5) {
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("knn_fit: k must be odd and positive");
    if (features.size() != labels.size()) throw std::invalid_argument("knn_fit: feature/label mismatch");
    if (features.size() < static_cast<std::size_t>(k))
        throw std::invalid_argument("knn_fit: need at least k training points");
    KnnModel m;
    m.k = k;
    const double n = static_cast<double>(features.size());
    for (const auto& f : features) {
        m.feat_mean[0] += f[0];
        m.feat_mean[1] += f[1];
    }
    m.feat_mean[0] /= n;
    m.feat_mean[1] /= n;
    double sx = 0.0, sy = 0.0;
    for (const auto& f : features) {
        sx += (f[0] - m.feat_mean[0]) * (f[0] - m.feat_mean[0]);
        sy += (f[1] - m.feat_mean[1]) * (f[1] - m.feat_mean[1]);
    }
    m.feat_scale[0] = std::max(std::sqrt(sx / n), 1e-12);
    m.feat_scale[1] = std::max(std::sqrt(sy / n), 1e-12);
    m.features = std::move(features);
    m.labels = std::move(labels);
    return m;
}

namespace detail {

struct Neighbor {
    double d2;
    std::size_t index;
    bool operator<(const Neighbor& o) const {
        return d2 < o.d2 || (d2 == o.d2 && index < o.index);
    }
};

inline void knn_neighbors(const KnnModel& m, const Feature2& f, std::vector<Neighbor>& best) {
    const double qx = (f[0] - m.feat_mean[0]) / m.feat_scale[0];
    const double qy = (f[1] - m.feat_mean[1]) / m.feat_scale[1];
    best.clear();
    best.reserve(m.k + 1);
    for (std::size_t i = 0; i < m.features.size(); ++i) {
        const double dx = (m.features[i][0] - m.feat_mean[0]) / m.feat_scale[0] - qx;
        const double dy = (m.features[i][1] - m.feat_mean[1]) / m.feat_scale[1] - qy;
        const Neighbor cand{dx * dx + dy * dy, i};
        if (best.size() < static_cast<std::size_t>(m.k)) {
            best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
        } else if (cand < best.back()) {
            best.pop_back();
            best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
        }
    }
}

}  // namespace detail

/// Per-class vote fractions among the k nearest neighbors (one-vs-rest scores).
inline std::array<double, 4> knn_scores(const KnnModel& m, const Feature2& f) {
    thread_local std::vector<detail::Neighbor> best;
    detail::knn_neighbors(m, f, best);
    std::array<double, 4> votes{};
    for (const auto& nb : best) votes[static_cast<int>(m.labels[nb.index])] += 1.0;
    for (auto& v : votes) v /= static_cast<double>(m.k);
    return votes;
}

inline QualityLabel knn_predict(const KnnModel& m, const Feature2& f) {
    const auto votes = knn_scores(m, f);
    int bestc = 0;
    for (int c = 1; c < 4; ++c)
        if (votes[c] > votes[bestc]) bestc = c;  // ties keep the better class
    return static_cast<QualityLabel>(bestc);
}

/// Classification metrics over the three non-Discard classes.
struct ClassReport {
    std::array<std::array<std::int64_t, 3>, 3> confusion{};  // [truth][predicted]
    std::array<double, 3> per_class_tpr{};
    std::array<double, 3> per_class_fnr{};
    std::array<double, 3> per_class_auc{};
    double accuracy = 0.0;
};

namespace detail {

/// Rank-based one-vs-rest AUC with average ranks on ties (equivalent to the
/// trapezoidal area under the tied-group ROC).
inline double auc_one_vs_rest(std::span<const double> scores, std::span<const unsigned char> positive) {
    std::size_t n_pos = 0;
    for (unsigned char b : positive) n_pos += b ? 1 : 0;
    const std::size_t n_neg = positive.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) return 0.5;
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks are 1-based
        for (std::size_t t = i; t < j; ++t)
            if (positive[order[t]]) rank_sum_pos += avg_rank;
        i = j;
    }
    return (rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace detail

inline ClassReport classification_report(std::span<const QualityLabel> predicted,
                                         std::span<const QualityLabel> truth,
                                         std::span<const std::array<double, 4>> scores) {
    if (predicted.size() != truth.size() || scores.size() != truth.size())
        throw std::invalid_argument("classification_report: length mismatch");
    ClassReport r;
    std::int64_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = static_cast<int>(truth[i]);
        const int p = static_cast<int>(predicted[i]);
        if (t > 2 || p > 2)
            throw std::invalid_argument("classification_report: Discard labels are excluded from reports");
        r.confusion[t][p] += 1;
        if (t == p) ++correct;
    }
    for (int c = 0; c < 3; ++c) {
        std::int64_t support = 0;
        for (int p = 0; p < 3; ++p) support += r.confusion[c][p];
        r.per_class_tpr[c] = support > 0 ? static_cast<double>(r.confusion[c][c]) / support : 0.0;
        r.per_class_fnr[c] = 1.0 - r.per_class_tpr[c];
    }
    std::vector<double> s(truth.size());
    std::vector<unsigned char> pos(truth.size());
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < truth.size(); ++i) {
            s[i] = scores[i][c];
            pos[i] = static_cast<int>(truth[i]) == c ? 1 : 0;
        }
        r.per_class_auc[c] = detail::auc_one_vs_rest(s, pos);
    }
    r.accuracy = truth.empty() ? 0.0 : static_cast<double>(correct) / truth.size();
    return r;
}

}  // namespace cvqkd
