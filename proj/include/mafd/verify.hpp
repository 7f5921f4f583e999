#pragma once

// Empirical checks of the dissipativity certificate: supply-rate margins along
// trajectories, L2-gain probes and the matrix identities behind the design.

#include "mafd/sim.hpp"

#include <random>

namespace mafd {

struct Neighborhood {
    double x_inf = 0.05;  ///< |x|_inf bound (p.u. / rad)
    double w_inf = 0.2;   ///< |w|_inf bound (p.u.)

    bool contains(const Vec& x, const Vec& w) const {
        return (x.size() == 0 || x.cwiseAbs().maxCoeff() <= x_inf) &&
               (w.size() == 0 || w.cwiseAbs().maxCoeff() <= w_inf);
    }
};

struct DissipationOptions {
    double tolerance = 1e-8;
    Neighborhood neighborhood{};
};

struct DissipationReport {
    std::vector<double> t, supply, storage_rate, margin;
    std::vector<char> inside;     ///< sample lies in the local neighbourhood
    double min_margin = INFINITY;
    double min_margin_inside = INFINITY;
    std::size_t violations = 0;          ///< inside the neighbourhood
    std::size_t violations_outside = 0;  ///< reported only
    std::size_t samples_inside = 0;

    std::string str() const {
        std::ostringstream s;
        s << "samples " << t.size() << "\n"
          << "samples_in_neighborhood " << samples_inside << "\n"
          << "min_margin " << min_margin << "\n"
          << "min_margin_in_neighborhood " << min_margin_inside << "\n"
          << "violations_in_neighborhood " << violations << "\n"
          << "violations_outside " << violations_outside << "\n";
        return s.str();
    }
};

/// m(t) = [y;w]' [Q S; S' R] [y;w] - 2 x'P x' per sample, with the (Q, S, R)
/// of the mode active at that sample.
inline DissipationReport dissipation_residual(const Trajectory& tr, const ControllerSet& cs,
                                              const DissipationOptions& o = {}) {
    if (tr.n != cs.n) throw ModelError("trajectory and controller set sizes differ");
    DissipationReport r;
    const std::size_t m = tr.size();
    r.t = tr.t;
    r.supply.resize(m);
    r.storage_rate.resize(m);
    r.margin.resize(m);
    r.inside.resize(m);
    for (std::size_t k = 0; k < m; ++k) {
        if (tr.sigma[k] >= cs.modes.size())
            throw ModelError("trajectory visits mode " + SwitchingVector(tr.n, tr.sigma[k]).str() +
                             " which the controller set does not cover");
        const auto& c = cs.modes[tr.sigma[k]];
        const Vec& y = tr.y[k];
        const Vec& w = tr.w[k];
        const double s = y.dot(c.Q * y) + 2.0 * y.dot(c.S * w) + w.dot(c.R * w);
        const double dv = 2.0 * tr.x[k].dot(cs.P * tr.xdot[k]);
        const double mg = s - dv;
        r.supply[k] = s;
        r.storage_rate[k] = dv;
        r.margin[k] = mg;
        const bool in = o.neighborhood.contains(tr.x[k], w);
        r.inside[k] = in;
        r.min_margin = std::min(r.min_margin, mg);
        if (in) {
            ++r.samples_inside;
            r.min_margin_inside = std::min(r.min_margin_inside, mg);
            if (mg < -o.tolerance) ++r.violations;
        } else if (mg < -o.tolerance) {
            ++r.violations_outside;
        }
    }
    return r;
}

/// Compares 2 x'P x' with a central difference of x'P x over the sample grid
/// at `count` random interior samples away from breakpoints. Returns the
/// largest relative disagreement.
inline double storage_rate_crosscheck(const Trajectory& tr, const Mat& P, int count,
                                      std::uint64_t seed) {
    std::vector<std::size_t> ok;
    auto same = [&](std::size_t a, std::size_t b) {
        return tr.sigma[a] == tr.sigma[b] && tr.topology[a] == tr.topology[b] &&
               (tr.w[a] - tr.w[b]).cwiseAbs().maxCoeff() == 0.0;
    };
    double scale = 0.0;
    for (std::size_t k = 0; k < tr.size(); ++k)
        scale = std::max(scale, std::abs(2.0 * tr.x[k].dot(P * tr.xdot[k])));
    for (std::size_t k = 1; k + 1 < tr.size(); ++k)
        if (same(k - 1, k) && same(k, k + 1)) ok.push_back(k);
    if (ok.empty() || scale == 0.0) return 0.0;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, ok.size() - 1);
    double worst = 0.0;
    for (int i = 0; i < count; ++i) {
        const std::size_t k = ok[pick(rng)];
        const double an = 2.0 * tr.x[k].dot(P * tr.xdot[k]);
        const double fd = (tr.x[k + 1].dot(P * tr.x[k + 1]) - tr.x[k - 1].dot(P * tr.x[k - 1])) /
                          (tr.t[k + 1] - tr.t[k - 1]);
        worst = std::max(worst, std::abs(an - fd) / std::max(std::abs(an), 1e-3 * scale));
    }
    return worst;
}

/// Trapezoidal L2 norm of a sampled vector signal.
inline double l2_norm(const std::vector<double>& t, const std::vector<Vec>& v) {
    double acc = 0.0;
    for (std::size_t k = 1; k < t.size(); ++k)
        acc += 0.5 * (t[k] - t[k - 1]) * (v[k].squaredNorm() + v[k - 1].squaredNorm());
    return std::sqrt(acc);
}

struct GainProbe {
    std::string name;
    std::optional<double> ratio;  ///< empty when |w|_L2 = 0
    double y_norm = 0.0, w_norm = 0.0;
};

struct GainEstimate {
    std::vector<GainProbe> probes;

    /// Largest ratio over applicable probes; empty if none applies.
    std::optional<double> gain() const {
        std::optional<double> g;
        for (const auto& p : probes)
            if (p.ratio && (!g || *p.ratio > *g)) g = p.ratio;
        return g;
    }
};

/// |y|_L2 / |w|_L2 for each probe disturbance, everything else taken from `base`.
inline GainEstimate estimate_l2_gain(const SimContext& ctx, const ControllerSet* cs,
                                     const ScenarioSpec& base,
                                     const std::vector<std::pair<std::string, DisturbanceProfile>>& probes) {
    GainEstimate est;
    for (const auto& [name, w] : probes) {
        ScenarioSpec s = base;
        s.disturbance = w;
        GainProbe p;
        p.name = name;
        const auto tr = run_scenario(s, ctx, cs);
        p.y_norm = l2_norm(tr.t, tr.y);
        p.w_norm = l2_norm(tr.t, tr.w);
        if (p.w_norm > 0.0) p.ratio = p.y_norm / p.w_norm;
        est.probes.push_back(p);
    }
    return est;
}

struct SchurCheck {
    SwitchingVector sigma;
    double min_eig_M = 0.0;
    double min_eig_Gamma = 0.0;
    bool agree = false;   ///< sign of both minimum eigenvalues matches
    bool passed = false;  ///< both positive definite
};

/// Forms the supply-minus-storage matrix of the closed loop from Ahat, Bhat
/// and compares its definiteness with that of the design matrix.
inline std::vector<SchurCheck> schur_equivalence_check(const ControllerSet& cs,
                                                       const SwitchedModel& model,
                                                       double gamma = 0.0) {
    if (cs.n != model.size() || static_cast<int>(cs.modes.size()) != model.mode_count())
        throw ModelError("controller set does not match the model");
    std::vector<SchurCheck> out;
    for (int j = 0; j < model.mode_count(); ++j) {
        const auto& m = model.modes[j];
        const auto& c = cs.modes[j];
        const auto nx = m.A.rows(), nw = m.B2.cols(), ny = m.C.rows();
        const Mat Ah = m.A + m.B1 * model.H + m.B1 * c.K * m.C;
        const Mat Bh = m.B2 + m.B1 * c.K * m.D;
        // [y; w] = E [x; w]
        Mat E = Mat::Zero(ny + nw, nx + nw);
        E.topLeftCorner(ny, nx) = m.C;
        E.topRightCorner(ny, nw) = m.D;
        E.bottomRightCorner(nw, nw) = Mat::Identity(nw, nw);
        Mat W(ny + nw, ny + nw);
        W << c.Q, c.S, c.S.transpose(), c.R;
        Mat storage = Mat::Zero(nx + nw, nx + nw);
        storage.topLeftCorner(nx, nx) = cs.P * Ah + Ah.transpose() * cs.P + 2.0 * gamma * cs.P;
        storage.topRightCorner(nx, nw) = cs.P * Bh;
        storage.bottomLeftCorner(nw, nx) = Bh.transpose() * cs.P;
        const Mat G = symmetrize(E.transpose() * W * E - storage);

        SchurCheck r;
        r.sigma = m.sigma;
        r.min_eig_M = min_eigenvalue(lmi_matrix(m, model.H, cs.P, c.V * c.K, c.S, c.R, sqrt_neg(c.Q), gamma));
        r.min_eig_Gamma = min_eigenvalue(G);
        r.agree = (r.min_eig_M > 0) == (r.min_eig_Gamma > 0);
        r.passed = r.agree && r.min_eig_M > 0 && r.min_eig_Gamma > 0;
        out.push_back(r);
    }
    return out;
}

struct PerturbationCheck {
    SwitchingVector sigma;
    double structure_error = 0.0;  ///< max |(M(H_new) - Mhat(H)) - documented block|
    double min_eig_block = 0.0;    ///< of -P B1 dH - (B1 dH)'P + 2 gamma P
};

/// Difference between the design matrix evaluated at H_new (gamma = 0) and
/// the robust matrix at H (with gamma), against the closed form with
/// dH = H_new - H. Only the (1,1) block may be nonzero.
inline std::vector<PerturbationCheck> perturbation_structure_check(const ControllerSet& cs,
                                                                   const SwitchedModel& model,
                                                                   const Mat& H_new, double gamma) {
    if (cs.n != model.size() || static_cast<int>(cs.modes.size()) != model.mode_count())
        throw ModelError("controller set does not match the model");
    const Mat dH = H_new - model.H;
    std::vector<PerturbationCheck> out;
    for (int j = 0; j < model.mode_count(); ++j) {
        const auto& m = model.modes[j];
        const auto& c = cs.modes[j];
        const Mat Qh = sqrt_neg(c.Q);
        const Mat U = c.V * c.K;
        const Mat diff = lmi_matrix(m, H_new, cs.P, U, c.S, c.R, Qh, 0.0) -
                         lmi_matrix(m, model.H, cs.P, U, c.S, c.R, Qh, gamma);
        const auto nx = m.A.rows();
        const Mat BdH = m.B1 * dH;
        const Mat block = -cs.P * BdH - BdH.transpose() * cs.P + 2.0 * gamma * cs.P;
        Mat doc = Mat::Zero(diff.rows(), diff.cols());
        doc.topLeftCorner(nx, nx) = block;
        PerturbationCheck r;
        r.sigma = m.sigma;
        r.structure_error = (diff - doc).cwiseAbs().maxCoeff();
        r.min_eig_block = min_eigenvalue(symmetrize(block));
        out.push_back(r);
    }
    return out;
}

}  // namespace mafd
