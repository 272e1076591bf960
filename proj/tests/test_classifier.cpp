#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "cvqkd/classifier.hpp"
#include "cvqkd/io.hpp"
#include "cvqkd/rng.hpp"

using namespace cvqkd;
using Catch::Approx;

namespace {

EllipseZones unit_zones(double k1 = 1.5, double k2 = 2.5, double k3 = 3.5) {
    EllipseZones z;
    z.mean = {0.0, 0.0};
    z.cov = {{{1.0, 0.0}, {0.0, 1.0}}};
    z.cov_inv = z.cov;
    z.k1 = k1;
    z.k2 = k2;
    z.k3 = k3;
    return z;
}

}  // namespace

TEST_CASE("ellipse zone fitting") {
    SECTION("isotropic gaussian recovers mean and covariance") {
        Rng rng = make_rng(1, "zones");
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<Feature2> pts(100000);
        for (auto& p : pts) p = {g(rng), g(rng)};
        const auto z = fit_ellipse_zones(pts);
        CHECK(std::fabs(z.mean[0]) < 0.02);
        CHECK(std::fabs(z.mean[1]) < 0.02);
        CHECK(z.cov[0][0] == Approx(1.0).epsilon(0.02));
        CHECK(z.cov[1][1] == Approx(1.0).epsilon(0.02));
        CHECK(std::fabs(z.cov[0][1]) < 0.02);
    }
    SECTION("degenerate scatter is rejected") {
        std::vector<Feature2> pts(64, Feature2{1.0, 2.0});
        CHECK_THROWS_AS(fit_ellipse_zones(pts), std::domain_error);
    }
    SECTION("labels are invariant under an affine transform of data and zones") {
        Rng rng = make_rng(2, "affine");
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<Feature2> pts(5000);
        for (auto& p : pts) {
            const double x = g(rng);
            p = {x, 0.4 * x + g(rng)};
        }
        const auto z = fit_ellipse_zones(pts);

        const double a = 2.0, b = 0.3, c = -0.5, d = 1.2, tx = 3.0, ty = -1.0;
        std::vector<Feature2> tpts(pts.size());
        for (std::size_t i = 0; i < pts.size(); ++i)
            tpts[i] = {a * pts[i][0] + b * pts[i][1] + tx, c * pts[i][0] + d * pts[i][1] + ty};
        const auto tz = fit_ellipse_zones(tpts);
        for (std::size_t i = 0; i < pts.size(); ++i)
            CHECK(label_point(z, pts[i]) == label_point(tz, tpts[i]));
    }
}

TEST_CASE("zone labeling semantics") {
    const auto z = unit_zones();
    CHECK(label_point(z, {0.0, 0.0}) == QualityLabel::Excellent);
    CHECK(label_point(z, {35.0, 0.0}) == QualityLabel::Discard);
    // exact boundaries resolve to the better class
    CHECK(label_point(z, {1.5, 0.0}) == QualityLabel::Excellent);
    CHECK(label_point(z, {2.5, 0.0}) == QualityLabel::Ordinary);
    CHECK(label_point(z, {3.5, 0.0}) == QualityLabel::Bad);
    CHECK(label_point(z, {3.5000001, 0.0}) == QualityLabel::Discard);
    // monotone in the Mahalanobis distance
    int prev = 0;
    for (double r = 0.0; r < 5.0; r += 0.05) {
        const int cls = static_cast<int>(label_point(z, {r, 0.0}));
        CHECK(cls >= prev);
        prev = cls;
    }
}

TEST_CASE("knn fitting contracts") {
    std::vector<Feature2> f5 = {{0, 0}, {1, 0}, {0, 1}, {1, 1}, {2, 2}};
    std::vector<QualityLabel> l5(5, QualityLabel::Excellent);
    CHECK_NOTHROW(knn_fit(f5, l5, 5));
    CHECK_THROWS_AS(knn_fit(f5, l5, 6), std::invalid_argument);   // even k
    CHECK_THROWS_AS(knn_fit(f5, l5, 7), std::invalid_argument);   // k > n
    std::vector<Feature2> dup = {{0, 0}, {0, 0}, {1, 1}};
    std::vector<QualityLabel> dupl = {QualityLabel::Excellent, QualityLabel::Bad, QualityLabel::Ordinary};
    CHECK_NOTHROW(knn_fit(dup, dupl, 3));  // conflicting duplicates resolved by vote
}

TEST_CASE("knn model serialization round-trips bit-exactly") {
    Rng rng = make_rng(3, "knn-json");
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<Feature2> f(64);
    std::vector<QualityLabel> l(64);
    for (std::size_t i = 0; i < f.size(); ++i) {
        f[i] = {g(rng), g(rng)};
        l[i] = static_cast<QualityLabel>(i % 3);
    }
    const auto m = knn_fit(f, l, 5);
    const auto m2 = knn_from_json(knn_to_json(m));
    CHECK(m2.k == m.k);
    CHECK(m2.features == m.features);
    CHECK(m2.labels == m.labels);
    CHECK(m2.feat_mean == m.feat_mean);
    CHECK(m2.feat_scale == m.feat_scale);
}

TEST_CASE("knn prediction") {
    SECTION("k = 1 recalls training points exactly") {
        std::vector<Feature2> f = {{0, 0}, {1, 0}, {0, 1}, {5, 5}};
        std::vector<QualityLabel> l = {QualityLabel::Excellent, QualityLabel::Ordinary,
                                       QualityLabel::Bad, QualityLabel::Ordinary};
        const auto m = knn_fit(f, l, 1);
        for (std::size_t i = 0; i < f.size(); ++i) CHECK(knn_predict(m, f[i]) == l[i]);
    }
    SECTION("uniform labels predict that label everywhere") {
        std::vector<Feature2> f = {{0, 0}, {1, 0}, {0, 1}};
        std::vector<QualityLabel> l(3, QualityLabel::Bad);
        const auto m = knn_fit(f, l, 3);
        CHECK(knn_predict(m, {100.0, -50.0}) == QualityLabel::Bad);
    }
    SECTION("vote ties resolve to the better class") {
        std::vector<Feature2> f = {{0, 1}, {1, 0}, {-1, 0}};
        std::vector<QualityLabel> l = {QualityLabel::Bad, QualityLabel::Ordinary, QualityLabel::Excellent};
        const auto m = knn_fit(f, l, 3);
        CHECK(knn_predict(m, {0.0, 0.0}) == QualityLabel::Excellent);
    }
    SECTION("permutation invariance with distinct distances") {
        Rng rng = make_rng(4, "knn-perm");
        std::normal_distribution<double> g(0.0, 1.0);
        std::vector<Feature2> f(200);
        std::vector<QualityLabel> l(200);
        for (std::size_t i = 0; i < f.size(); ++i) {
            f[i] = {g(rng), g(rng)};
            l[i] = static_cast<QualityLabel>(i % 3);
        }
        const auto m1 = knn_fit(f, l, 5);
        std::vector<std::size_t> perm(f.size());
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<Feature2> pf(f.size());
        std::vector<QualityLabel> pl(f.size());
        for (std::size_t i = 0; i < f.size(); ++i) {
            pf[i] = f[perm[i]];
            pl[i] = l[perm[i]];
        }
        const auto m2 = knn_fit(pf, pl, 5);
        for (int trial = 0; trial < 200; ++trial) {
            const Feature2 q = {g(rng), g(rng)};
            CHECK(knn_predict(m1, q) == knn_predict(m2, q));
        }
    }
}

TEST_CASE("classification report") {
    SECTION("perfect predictions") {
        std::vector<QualityLabel> t, p;
        std::vector<std::array<double, 4>> s;
        for (int i = 0; i < 300; ++i) {
            const auto c = static_cast<QualityLabel>(i % 3);
            t.push_back(c);
            p.push_back(c);
            std::array<double, 4> sc{};
            sc[i % 3] = 1.0;
            s.push_back(sc);
        }
        const auto r = classification_report(p, t, s);
        CHECK(r.accuracy == 1.0);
        for (int c = 0; c < 3; ++c) {
            CHECK(r.confusion[c][c] == 100);
            CHECK(r.per_class_tpr[c] == 1.0);
            CHECK(r.per_class_fnr[c] == 0.0);
            CHECK(r.per_class_auc[c] == Approx(1.0).epsilon(1e-12));
        }
    }
    SECTION("a single mislabel among n") {
        std::vector<QualityLabel> t(100, QualityLabel::Excellent), p = t;
        for (std::size_t i = 0; i < 50; ++i) t[i] = p[i] = QualityLabel::Ordinary;
        p[0] = QualityLabel::Bad;
        std::vector<std::array<double, 4>> s(100, {0.5, 0.5, 0.0, 0.0});
        const auto r = classification_report(p, t, s);
        CHECK(r.accuracy == Approx(99.0 / 100.0).epsilon(1e-12));
    }
    SECTION("row sums equal supports and tpr + fnr = 1") {
        Rng rng = make_rng(5, "report");
        std::uniform_int_distribution<int> u(0, 2);
        std::vector<QualityLabel> t(1000), p(1000);
        std::vector<std::array<double, 4>> s(1000);
        std::array<std::int64_t, 3> support{};
        for (std::size_t i = 0; i < t.size(); ++i) {
            t[i] = static_cast<QualityLabel>(u(rng));
            p[i] = static_cast<QualityLabel>(u(rng));
            support[static_cast<int>(t[i])]++;
            s[i] = {0.3, 0.3, 0.4, 0.0};
        }
        const auto r = classification_report(p, t, s);
        for (int c = 0; c < 3; ++c) {
            std::int64_t row = 0;
            for (int j = 0; j < 3; ++j) row += r.confusion[c][j];
            CHECK(row == support[c]);
            CHECK(r.per_class_tpr[c] + r.per_class_fnr[c] == Approx(1.0).epsilon(1e-12));
        }
    }
    SECTION("uniformly random scores give AUC near one half") {
        Rng rng = make_rng(6, "auc-null");
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::uniform_int_distribution<int> cls(0, 2);
        const std::size_t n = 10000;
        std::vector<QualityLabel> t(n), p(n);
        std::vector<std::array<double, 4>> s(n);
        for (std::size_t i = 0; i < n; ++i) {
            t[i] = static_cast<QualityLabel>(cls(rng));
            p[i] = static_cast<QualityLabel>(cls(rng));
            s[i] = {u(rng), u(rng), u(rng), 0.0};
        }
        const auto r = classification_report(p, t, s);
        for (int c = 0; c < 3; ++c) CHECK(r.per_class_auc[c] == Approx(0.5).margin(0.03));
    }
    SECTION("length mismatch is a contract violation") {
        std::vector<QualityLabel> t(3, QualityLabel::Excellent), p(2, QualityLabel::Excellent);
        std::vector<std::array<double, 4>> s(3);
        CHECK_THROWS_AS(classification_report(p, t, s), std::invalid_argument);
    }
}
