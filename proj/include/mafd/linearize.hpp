#pragma once

// Per-mode linear models about the operating point:
//   x' = A x + B1 u + B2 w,  u = H x,  y = C x + D w.

#include "mafd/dynamics.hpp"

#include <memory>
#include <string>
#include <vector>

namespace mafd {

struct ModeMatrices {
    SwitchingVector sigma;
    Mat A, B1, B2, C, D;

    /// A + B1 H: the primary loop with the network closed.
    Mat A_closed(const Mat& H) const { return A + B1 * H; }
};

struct LinearizeOptions {
    /// Largest |h(0)| accepted as an equilibrium.
    double equilibrium_tolerance = 1e-8;
};

namespace detail {

/// Affine row map r(x, w) = rx * x + rw * w.
struct RowMap {
    Eigen::RowVectorXd rx, rw;
};

}  // namespace detail

inline void check_equilibrium(const Plant& p, double tol) {
    const Vec h0 = coupling_h(p, Vec::Zero(3 * p.size()));
    const double r = h0.size() ? h0.cwiseAbs().maxCoeff() : 0.0;
    if (r > tol)
        throw ModelError("operating point is not a power-flow solution (|h(0)| = " +
                         std::to_string(r) + ")");
}

inline void check_rank(const ModeMatrices& m) {
    if (m.B1.cols() == 0) return;
    Eigen::ColPivHouseholderQR<Mat> qr(m.B1);
    qr.setThreshold(1e-12);
    if (qr.rank() < m.B1.cols())
        throw RankError("B1 of mode " + m.sigma.str() + " is rank deficient (rank " +
                        std::to_string(qr.rank()) + " < " + std::to_string(m.B1.cols()) + ")");
}

/// Analytic linearization of one mode at x = 0, w = 0.
inline ModeMatrices linearize_mode(const Plant& p, const SwitchingVector& sigma, const Mat& H,
                                   const LinearizeOptions& opt = {}) {
    const int n = p.size();
    if (sigma.size() != n) throw ModelError("switching vector size mismatch");
    check_equilibrium(p, opt.equilibrium_tolerance);
    const auto s = injection_sensitivity(p.graph(), p.op().V, p.op().delta);

    ModeMatrices m;
    m.sigma = sigma;
    m.A = Mat::Zero(3 * n, 3 * n);
    m.B1 = Mat::Zero(3 * n, 2 * n);
    m.B2 = Mat::Zero(3 * n, 2 * n);

    // Primary-loop rates with u = Hx, used by the chain rule of the angle-mode omega rows.
    std::vector<detail::RowMap> rate_delta(n), rate_V(n);
    for (int k = 0; k < n; ++k) {
        const auto& c = p.params().mg[k];
        auto& rv = rate_V[k];
        rv.rx = -H.row(2 * k + 1) / c.J_V;
        rv.rx(3 * k + 2) -= c.D_V / c.J_V;
        rv.rw = Eigen::RowVectorXd::Zero(2 * n);
        rv.rw(2 * k + 1) = 1.0 / c.J_V;

        auto& rd = rate_delta[k];
        rd.rw = Eigen::RowVectorXd::Zero(2 * n);
        if (sigma[k] == Mode::angle) {
            rd.rx = -H.row(2 * k) / c.J_delta;
            rd.rx(3 * k) -= c.D_delta / c.J_delta;
            rd.rw(2 * k) = 1.0 / c.J_delta;
        } else {
            rd.rx = Eigen::RowVectorXd::Zero(3 * n);
            rd.rx(3 * k + 1) = 1.0;
            rd.rx(3 * k) = -c.angle_leakage;
        }
    }

    for (int i = 0; i < n; ++i) {
        const auto& c = p.params().mg[i];
        const int d = 3 * i, w = 3 * i + 1, v = 3 * i + 2;
        const int P = 2 * i, Q = 2 * i + 1;

        m.A(v, v) = -c.D_V / c.J_V;
        m.B1(v, Q) = -1.0 / c.J_V;
        m.B2(v, Q) = 1.0 / c.J_V;

        if (sigma[i] == Mode::frequency) {
            m.A(d, w) = 1.0;
            m.A(d, d) = -c.angle_leakage;
            m.A(w, w) = -c.D_omega / c.J_omega;
            m.B1(w, P) = -1.0 / c.J_omega;
            m.B2(w, P) = 1.0 / c.J_omega;
            continue;
        }

        m.A(d, d) = -c.D_delta / c.J_delta;
        m.B1(d, P) = -1.0 / c.J_delta;
        m.B2(d, P) = 1.0 / c.J_delta;

        const double a = c.D_delta / c.J_delta;
        if (p.params().omega_propagation == OmegaPropagation::literal) {
            m.A.row(w) -= a * m.A.row(d);
            m.B1.row(w) -= a * m.B1.row(d);
            m.B2.row(w) -= a * m.B2.row(d);
        } else {
            m.A(w, w) -= a;
        }
        for (int k = 0; k < n; ++k) {
            const double sd = s.dP_ddelta(i, k) / c.J_delta, sv = s.dP_dV(i, k) / c.J_delta;
            if (sd != 0.0) {
                m.A.row(w) -= sd * rate_delta[k].rx;
                m.B2.row(w) -= sd * rate_delta[k].rw;
            }
            if (sv != 0.0) {
                m.A.row(w) -= sv * rate_V[k].rx;
                m.B2.row(w) -= sv * rate_V[k].rw;
            }
        }
    }

    const Mat Ac = m.A + m.B1 * H;
    m.C = Mat::Zero(2 * n, 3 * n);
    m.D = Mat::Zero(2 * n, 2 * n);
    for (int i = 0; i < n; ++i) {
        const int row = sigma[i] == Mode::angle ? 3 * i : 3 * i + 1;
        m.C.row(2 * i) = Ac.row(row);
        m.D.row(2 * i) = m.B2.row(row);
        m.C(2 * i + 1, 3 * i + 2) = 1.0;
    }
    check_rank(m);
    return m;
}

/// Central-difference linearization of assemble_f / output_g, for validation.
inline ModeMatrices finite_difference_mode(const Plant& p, const SwitchingVector& sigma,
                                           double eps = 1e-6) {
    const int n = p.size();
    const Vec x0 = Vec::Zero(3 * n), w0 = Vec::Zero(2 * n), u0 = coupling_h(p, x0);
    ModeMatrices m;
    m.sigma = sigma;
    m.A.resize(3 * n, 3 * n);
    m.C.resize(2 * n, 3 * n);
    m.B1.resize(3 * n, 2 * n);
    m.B2.resize(3 * n, 2 * n);
    m.D.resize(2 * n, 2 * n);
    for (int c = 0; c < 3 * n; ++c) {
        Vec e = Vec::Zero(3 * n);
        e(c) = eps;
        m.A.col(c) = (assemble_f(p, sigma, e, u0, w0) - assemble_f(p, sigma, -e, u0, w0)) / (2 * eps);
        m.C.col(c) = (output_g(p, sigma, e, w0) - output_g(p, sigma, -e, w0)) / (2 * eps);
    }
    for (int c = 0; c < 2 * n; ++c) {
        Vec e = Vec::Zero(2 * n);
        e(c) = eps;
        m.B1.col(c) =
            (assemble_f(p, sigma, x0, u0 + e, w0) - assemble_f(p, sigma, x0, u0 - e, w0)) / (2 * eps);
        m.B2.col(c) = (assemble_f(p, sigma, x0, u0, e) - assemble_f(p, sigma, x0, u0, -e)) / (2 * eps);
        m.D.col(c) = (output_g(p, sigma, x0, e) - output_g(p, sigma, x0, -e)) / (2 * eps);
    }
    return m;
}

/// Largest element-wise deviation relative to max(1, |reference entry|).
inline double relative_deviation(const Mat& a, const Mat& ref) {
    if (a.rows() != ref.rows() || a.cols() != ref.cols()) return INFINITY;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            worst = std::max(worst, std::abs(a(i, j) - ref(i, j)) / std::max(1.0, std::abs(ref(i, j))));
    return worst;
}

inline double relative_deviation(const ModeMatrices& a, const ModeMatrices& ref) {
    return std::max({relative_deviation(a.A, ref.A), relative_deviation(a.B1, ref.B1),
                     relative_deviation(a.B2, ref.B2), relative_deviation(a.C, ref.C),
                     relative_deviation(a.D, ref.D)});
}

struct SwitchedModel {
    std::shared_ptr<const Plant> plant;
    Mat H;
    std::vector<ModeMatrices> modes;  ///< indexed by SwitchingVector::index()

    int size() const { return plant ? plant->size() : 0; }
    int mode_count() const { return static_cast<int>(modes.size()); }
    const ModeMatrices& mode(const SwitchingVector& s) const { return modes.at(s.index()); }
};

inline constexpr int kDefaultModeCap = 12;

inline SwitchedModel build_switched_model(std::shared_ptr<const Plant> plant,
                                          int mode_cap = kDefaultModeCap,
                                          const LinearizeOptions& opt = {}) {
    if (!plant) throw ModelError("no plant");
    const int n = plant->size();
    if (n > mode_cap)
        throw ModelError(std::to_string(n) + " microgrids exceed the mode enumeration cap (" +
                         std::to_string(mode_cap) + ")");
    SwitchedModel sm;
    sm.plant = plant;
    sm.H = jacobian_H(plant->graph(), plant->op());
    const std::uint32_t count = 1u << n;
    sm.modes.reserve(count);
    for (std::uint32_t j = 0; j < count; ++j)
        sm.modes.push_back(linearize_mode(*plant, SwitchingVector(n, j), sm.H, opt));
    return sm;
}

inline SwitchedModel build_switched_model(const Plant& plant, int mode_cap = kDefaultModeCap,
                                          const LinearizeOptions& opt = {}) {
    return build_switched_model(std::make_shared<const Plant>(plant), mode_cap, opt);
}

}  // namespace mafd
