#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "detector.hpp"
#include "estimation.hpp"

namespace cvqkd {

/// Inputs of the equalized covariance matrix. amp_ratio = A_eq/A and
/// phase_residual = dphi - dphi_eq; (1, 0) is perfect correction and the
/// matrix reduces to the standard lossy-channel form.
struct CovarianceSpec {
    double v;               // V = V_A + 1, SNU
    double transmittance;   // T
    double excess;          // eps, SNU
    double amp_ratio = 1.0;
    double phase_residual = 0.0;

    CovarianceSpec(double v_, double T_, double eps_, double amp_ratio_ = 1.0, double phase_residual_ = 0.0)
        : v(v_), transmittance(T_), excess(eps_), amp_ratio(amp_ratio_), phase_residual(phase_residual_) {
        if (!(v >= 1.0)) throw std::invalid_argument("CovarianceSpec: V must be >= 1");
        if (!(transmittance > 0.0 && transmittance <= 1.0))
            throw std::invalid_argument("CovarianceSpec: T must be in (0,1]");
        if (excess < 0.0) throw std::invalid_argument("CovarianceSpec: eps must be >= 0");
        if (!(amp_ratio > 0.0)) throw std::invalid_argument("CovarianceSpec: amp ratio must be > 0");
    }
};

struct CovarianceMatrix {
    std::array<std::array<double, 4>, 4> m{};

    double& operator()(int i, int j) { return m[i][j]; }
    double operator()(int i, int j) const { return m[i][j]; }
};

/// Two-mode covariance in (x_A, p_A, x_B, p_B) order:
///   [ V I2          Lam R(d) Z ]
///   [ (Lam R(d) Z)^T    b I2   ]
/// with b = T(V + 1/T - 1 + eps), Lam = sqrt(amp_ratio) sqrt(T (V^2-1)) and
/// the rotated correlation block {{cos d, -sin d}, {-sin d, -cos d}}.
inline CovarianceMatrix build_covariance(const CovarianceSpec& s) {
    const double b = s.transmittance * (s.v + 1.0 / s.transmittance - 1.0 + s.excess);
    const double lam = std::sqrt(s.amp_ratio) * std::sqrt(s.transmittance * (s.v * s.v - 1.0));
    const double c = std::cos(s.phase_residual), sn = std::sin(s.phase_residual);
    CovarianceMatrix g;
    g(0, 0) = g(1, 1) = s.v;
    g(2, 2) = g(3, 3) = b;
    g(0, 2) = lam * c;
    g(0, 3) = -lam * sn;
    g(1, 2) = -lam * sn;
    g(1, 3) = -lam * c;
    g(2, 0) = g(0, 2);
    g(3, 0) = g(0, 3);
    g(2, 1) = g(1, 2);
    g(3, 1) = g(1, 3);
    return g;
}

namespace detail {

inline double det2(double a, double b, double c, double d) { return a * d - b * c; }

inline double det4(const CovarianceMatrix& g) {
    // Laplace expansion over the first row
    double det = 0.0;
    for (int c = 0; c < 4; ++c) {
        double sub[3][3];
        for (int i = 1; i < 4; ++i) {
            int cc = 0;
            for (int j = 0; j < 4; ++j) {
                if (j == c) continue;
                sub[i - 1][cc++] = g(i, j);
            }
        }
        const double m3 = sub[0][0] * (sub[1][1] * sub[2][2] - sub[1][2] * sub[2][1]) -
                          sub[0][1] * (sub[1][0] * sub[2][2] - sub[1][2] * sub[2][0]) +
                          sub[0][2] * (sub[1][0] * sub[2][1] - sub[1][1] * sub[2][0]);
        det += ((c % 2 == 0) ? 1.0 : -1.0) * g(0, c) * m3;
    }
    return det;
}

}  // namespace detail

/// Symplectic eigenvalues of a two-mode covariance matrix: the absolute
/// eigenvalues of i Omega gamma, returned in descending order. Computed from
/// K = -(Omega gamma)^2, whose eigenvalues are the doubled nu^2: the mean of
/// the spectrum is tr(K)/4 and the splitting comes from the trace of the
/// centered square, tr((K - m I)^2) = (nu1^2 - nu2^2)^2. Unlike the textbook
/// Delta^2 - 4 det(gamma) discriminant, the centered form does not cancel
/// catastrophically near degenerate (pure-state) spectra.
inline std::array<double, 2> symplectic_spectrum(const CovarianceMatrix& g) {
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            if (std::fabs(g(i, j) - g(j, i)) > 1e-9 * std::max(1.0, std::fabs(g(i, j))))
                throw std::invalid_argument("symplectic_spectrum: matrix not symmetric");
    double m4[4][4];  // Omega gamma
    for (int j = 0; j < 4; ++j) {
        m4[0][j] = g(1, j);
        m4[1][j] = -g(0, j);
        m4[2][j] = g(3, j);
        m4[3][j] = -g(2, j);
    }
    double k[4][4];  // -(Omega gamma)^2
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) {
            double acc = 0.0;
            for (int l = 0; l < 4; ++l) acc += m4[i][l] * m4[l][j];
            k[i][j] = -acc;
        }
    const double mean = (k[0][0] + k[1][1] + k[2][2] + k[3][3]) / 4.0;
    for (int i = 0; i < 4; ++i) k[i][i] -= mean;
    double split2 = 0.0;  // tr(K_centered^2) = (nu1^2 - nu2^2)^2
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) split2 += k[i][j] * k[j][i];
    const double split = std::sqrt(std::max(split2, 0.0)) / 2.0;
    const double hi = std::sqrt(std::max(mean + split, 0.0));
    const double lo = std::sqrt(std::max(mean - split, 0.0));
    return {hi, lo};
}

/// Schur complement after a perfect x-quadrature homodyne of mode B:
/// gamma_A - sigma_AB (X gamma_B X)^+ sigma_AB^T with X = diag(1, 0).
inline std::array<std::array<double, 2>, 2> conditional_after_homodyne(const CovarianceMatrix& g) {
    const double vxx = g(2, 2);
    if (!(vxx > 1e-12)) throw std::domain_error("conditional_after_homodyne: singular measured quadrature");
    const std::array<double, 2> c = {g(0, 2), g(1, 2)};  // Cov((x_A, p_A), x_B)
    std::array<std::array<double, 2>, 2> out = {{{g(0, 0), g(0, 1)}, {g(1, 0), g(1, 1)}}};
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) out[i][j] -= c[i] * c[j] / vxx;
    return out;
}

/// Von Neumann entropy of one thermal symplectic mode, in bits.
inline double g_entropy(double nu) {
    if (nu < 1.0 - 1e-6) throw std::domain_error("g_entropy: unphysical symplectic eigenvalue");
    nu = std::max(nu, 1.0);
    const double x = (nu - 1.0) / 2.0;
    if (x <= 0.0) return 0.0;
    return (x + 1.0) * std::log2(x + 1.0) - x * std::log2(x);
}

/// I_AB for reverse-reconciled homodyne detection with detector efficiency
/// eta and electronic noise nu_el, all noises shot-noise referred.
inline double mutual_information(double v_a, double T, double eps, double eta, double nu_el) {
    if (T <= 0.0) return 0.0;  // zero-information short-circuit
    const double v = v_a + 1.0;
    const double chi_line = 1.0 / T - 1.0 + eps;
    const double chi_hom = (1.0 + nu_el) / eta - 1.0;
    const double chi_tot = chi_line + chi_hom / T;
    return 0.5 * std::log2((v + chi_tot) / (1.0 + chi_tot));
}

/// Holevo bound for a perfect x-homodyne of mode B on the given state.
inline double holevo_bound(const CovarianceMatrix& g) {
    const auto nu = symplectic_spectrum(g);
    const auto cond = conditional_after_homodyne(g);
    const double det_c = cond[0][0] * cond[1][1] - cond[0][1] * cond[1][0];
    const double nu_c = std::sqrt(std::max(det_c, 0.0));
    return g_entropy(nu[0]) + g_entropy(nu[1]) - g_entropy(nu_c);
}

namespace detail {

/// Small dense matrix, row-major.
struct MatN {
    int n = 0;
    std::vector<double> a;
    explicit MatN(int n_) : n(n_), a(static_cast<std::size_t>(n_) * n_, 0.0) {}
    double& at(int i, int j) { return a[static_cast<std::size_t>(i) * n + j]; }
    double at(int i, int j) const { return a[static_cast<std::size_t>(i) * n + j]; }
};

inline MatN matmul(const MatN& x, const MatN& y) {
    MatN r(x.n);
    for (int i = 0; i < x.n; ++i)
        for (int k = 0; k < x.n; ++k) {
            const double v = x.at(i, k);
            if (v == 0.0) continue;
            for (int j = 0; j < x.n; ++j) r.at(i, j) += v * y.at(k, j);
        }
    return r;
}

/// K = -(Omega gamma)^2; eigenvalues of K are the squared symplectic
/// eigenvalues, each doubled. Newton's identities on tr(K^k) recover them for
/// up to three modes without a general eigensolver.
inline std::vector<double> symplectic_eigs_nmode(const MatN& gamma) {
    const int n2 = gamma.n;
    const int nm = n2 / 2;
    if (nm < 1 || nm > 3 || nm * 2 != n2)
        throw std::invalid_argument("symplectic_eigs_nmode: supports 1 to 3 modes");
    MatN m(n2);  // Omega * gamma
    for (int mode = 0; mode < nm; ++mode)
        for (int j = 0; j < n2; ++j) {
            m.at(2 * mode, j) = gamma.at(2 * mode + 1, j);
            m.at(2 * mode + 1, j) = -gamma.at(2 * mode, j);
        }
    MatN k(n2);  // -M^2
    {
        const MatN mm = matmul(m, m);
        for (std::size_t i = 0; i < k.a.size(); ++i) k.a[i] = -mm.a[i];
    }
    auto trace = [](const MatN& x) {
        double t = 0.0;
        for (int i = 0; i < x.n; ++i) t += x.at(i, i);
        return t;
    };
    // Center the spectrum first; the shifted power sums condition the root
    // extraction far better near degenerate spectra.
    const double mean = trace(k) / static_cast<double>(n2);
    for (int i = 0; i < n2; ++i) k.at(i, i) -= mean;
    if (nm == 1) return {std::sqrt(std::max(mean, 0.0))};
    const MatN k2 = matmul(k, k);
    const double p2 = trace(k2) / 2.0;  // sum of shifted nu^2 squares
    if (nm == 2) {
        // shifted values are +-x with p2 = 2 x^2
        const double x = std::sqrt(std::max(p2 / 2.0, 0.0));
        return {std::sqrt(std::max(mean + x, 0.0)), std::sqrt(std::max(mean - x, 0.0))};
    }
    const double p3 = trace(matmul(k2, k)) / 2.0;
    // shifted values solve t^3 + p t + q = 0 with p = -p2/2, q = -p3/3
    const double p = -p2 / 2.0;
    const double q = -p3 / 3.0;
    std::vector<double> mu(3);
    if (p >= -1e-30) {
        mu[0] = mu[1] = mu[2] = mean;
    } else {
        const double amp = 2.0 * std::sqrt(-p / 3.0);
        const double arg = std::clamp(3.0 * q / (p * amp), -1.0, 1.0);
        const double theta = std::acos(arg) / 3.0;
        for (int i = 0; i < 3; ++i)
            mu[i] = amp * std::cos(theta - 2.0 * M_PI * i / 3.0) + mean;
    }
    std::vector<double> nu(3);
    for (int i = 0; i < 3; ++i) nu[i] = std::sqrt(std::max(mu[i], 0.0));
    std::sort(nu.begin(), nu.end(), std::greater<>());
    return nu;
}

/// Condition a 2n-dim covariance on an x-homodyne of one mode; returns the
/// (2n-2)-dim conditional matrix over the remaining modes.
inline MatN condition_on_x(const MatN& g, int mode) {
    const int xi = 2 * mode;
    const double vxx = g.at(xi, xi);
    if (!(vxx > 1e-12)) throw std::domain_error("condition_on_x: singular measured quadrature");
    std::vector<int> keep;
    for (int i = 0; i < g.n; ++i)
        if (i != xi && i != xi + 1) keep.push_back(i);
    MatN out(static_cast<int>(keep.size()));
    for (std::size_t i = 0; i < keep.size(); ++i)
        for (std::size_t j = 0; j < keep.size(); ++j)
            out.at(static_cast<int>(i), static_cast<int>(j)) =
                g.at(keep[i], keep[j]) - g.at(keep[i], xi) * g.at(keep[j], xi) / vxx;
    return out;
}

}  // namespace detail

/// Holevo bound with the trusted-detector model: Eve purifies the channel
/// only; Bob's homodyne runs through a beamsplitter of transmittance eta fed
/// by an EPR ancilla carrying the electronic noise. Built from explicit
/// matrices: channel state spectrum minus the conditional spectrum of the
/// remaining modes after the detected quadrature is measured.
inline double holevo_bound(double v_a, double T, double eps, const DetectorModel& det) {
    const CovarianceSpec spec(v_a + 1.0, T, eps);
    const CovarianceMatrix g = build_covariance(spec);
    const auto nu_ch = symplectic_spectrum(g);
    const double s_e = g_entropy(nu_ch[0]) + g_entropy(nu_ch[1]);

    double eta = det.eta;
    if (eta >= 1.0) {
        if (det.nu_el <= 0.0) return holevo_bound(g);  // perfect detection
        eta = 1.0 - 1e-9;
    }
    const double d = 1.0 + det.nu_el / (1.0 - eta);

    // Modes (A, B, F, G): channel output on (A, B), EPR(d) on (F, G).
    detail::MatN big(8);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) big.at(i, j) = g(i, j);
    big.at(4, 4) = big.at(5, 5) = big.at(6, 6) = big.at(7, 7) = d;
    const double cfg_ = std::sqrt(std::max(d * d - 1.0, 0.0));
    big.at(4, 6) = big.at(6, 4) = cfg_;
    big.at(5, 7) = big.at(7, 5) = -cfg_;

    // Beamsplitter eta on (B, F)
    detail::MatN s(8);
    s.at(0, 0) = s.at(1, 1) = s.at(6, 6) = s.at(7, 7) = 1.0;
    const double rt = std::sqrt(eta), rr = std::sqrt(1.0 - eta);
    s.at(2, 2) = rt;
    s.at(2, 4) = rr;
    s.at(3, 3) = rt;
    s.at(3, 5) = rr;
    s.at(4, 2) = -rr;
    s.at(4, 4) = rt;
    s.at(5, 3) = -rr;
    s.at(5, 5) = rt;

    detail::MatN sg = detail::matmul(s, big);
    detail::MatN st(8);
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) st.at(i, j) = s.at(j, i);
    detail::MatN mixed = detail::matmul(sg, st);

    const detail::MatN cond = detail::condition_on_x(mixed, 1);  // measure x of detected mode B
    const auto nus = detail::symplectic_eigs_nmode(cond);
    double s_cond = 0.0;
    for (double nu : nus) s_cond += g_entropy(std::max(nu, 1.0));
    return s_e - s_cond;
}

struct SecurityConfig {
    double beta_r = 0.95;  // reconciliation efficiency
    double fer = 0.0;      // frame error rate
    double delta_n = 0.0;  // privacy-amplification offset, bits/pulse
    double v_a;            // SNU
    DetectorModel detector;

    SecurityConfig(double beta, double fer_, double delta, double v_a_, DetectorModel det)
        : beta_r(beta), fer(fer_), delta_n(delta), v_a(v_a_), detector(det) {
        if (!(beta_r >= 0.0 && beta_r <= 1.0)) throw std::invalid_argument("SecurityConfig: beta_R in [0,1]");
        if (!(fer >= 0.0 && fer <= 1.0)) throw std::invalid_argument("SecurityConfig: FER in [0,1]");
        if (!(v_a > 0.0)) throw std::invalid_argument("SecurityConfig: V_A must be > 0");
    }
};

struct KeyRateReport {
    double i_ab = 0.0;     // bits/pulse
    double chi_be = 0.0;   // bits/pulse
    double k_rate = 0.0;   // clamped at 0
    double k_raw = 0.0;    // signed value before the clamp
    double beta_r = 0.0;
    double fer = 0.0;
    double delta_n = 0.0;
    CovarianceMatrix gamma;  // channel covariance the bound was computed from
};

/// Asymptotic reverse-reconciliation key rate at a (T, eps) operating point.
inline KeyRateReport keyrate_point(double T, double eps, const SecurityConfig& cfg) {
    if (!(T > 0.0 && T <= 1.0)) throw std::invalid_argument("keyrate_point: T must be in (0,1]");
    KeyRateReport r;
    r.beta_r = cfg.beta_r;
    r.fer = cfg.fer;
    r.delta_n = cfg.delta_n;
    r.i_ab = mutual_information(cfg.v_a, T, eps, cfg.detector.eta, cfg.detector.nu_el);
    r.chi_be = holevo_bound(cfg.v_a, T, std::max(eps, 0.0), cfg.detector);
    r.gamma = build_covariance(CovarianceSpec(cfg.v_a + 1.0, T, std::max(eps, 0.0)));
    r.k_raw = (1.0 - cfg.fer) * (cfg.beta_r * r.i_ab - r.chi_be - cfg.delta_n);
    r.k_rate = std::max(0.0, r.k_raw);
    return r;
}

/// K = (1 - FER) [ beta_R I_AB(<T>, eps) - chi_BE(<T>, eps) - Delta(n) ],
/// reported clamped at 0 with the signed value preserved.
inline KeyRateReport secret_key_rate(const AggregateEstimate& agg, const SecurityConfig& cfg) {
    return keyrate_point(agg.T_mean, agg.eps_mean, cfg);
}

}  // namespace cvqkd
