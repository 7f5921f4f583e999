#pragma once

// Dissipativity-based secondary controller synthesis over all switching modes
// with a common storage matrix P, plus certificate re-verification.
//
// For every mode j the design matrix
//
//        [ -P A0 - A0'P - B1 U C - C'U'B1' - 2 g P   -P B2 - B1 U D + C'S   -C'Qh ]
//   M =  [                 *                          D'S + S'D + R          -D'Qh ]
//        [                 *                                *                  I   ]
//
// with A0 = A + B1 H, Qh = (-Q)^(1/2), must be positive definite, subject to
// P B1 = B1 V (V diagonal) and U restricted to the neighbour pattern. The gain
// is K = V^-1 U. g = 0 is the nominal design, g > 0 the robust one.

#include "mafd/linearize.hpp"
#include "mafd/sdp.hpp"

#include <chrono>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace mafd {

/// Allowed 2x2 gain blocks: (i, k) iff k is a neighbour of i.
class SparsityPattern {
public:
    SparsityPattern() = default;
    explicit SparsityPattern(Eigen::MatrixXi mask) : mask_(std::move(mask)) {
        for (int i = 0; i < size(); ++i) mask_(i, i) = 1;
    }

    static SparsityPattern from_graph(const AdmittanceGraph& g) {
        Eigen::MatrixXi m = Eigen::MatrixXi::Zero(g.size(), g.size());
        for (int i = 0; i < g.size(); ++i)
            for (int k : g.neighbors(i)) m(i, k) = m(k, i) = 1;
        return SparsityPattern(m);
    }

    static SparsityPattern dense(int n) { return SparsityPattern(Eigen::MatrixXi::Ones(n, n)); }

    int size() const { return static_cast<int>(mask_.rows()); }
    bool allowed(int i, int k) const { return mask_(i, k) != 0; }
    bool entry_allowed(int a, int b) const { return allowed(a / 2, b / 2); }
    const Eigen::MatrixXi& mask() const { return mask_; }

    /// True when every entry outside the pattern is exactly zero.
    bool conforms(const Mat& K) const {
        if (K.rows() != 2 * size() || K.cols() != 2 * size()) return false;
        for (int a = 0; a < K.rows(); ++a)
            for (int b = 0; b < K.cols(); ++b)
                if (!entry_allowed(a, b) && K(a, b) != 0.0) return false;
        return true;
    }

private:
    Eigen::MatrixXi mask_;
};

enum class Structure { distributed, centralized };

inline const char* to_string(Structure s) {
    return s == Structure::distributed ? "distributed" : "centralized";
}

struct SynthesisOptions {
    Structure structure = Structure::distributed;
    double q = 1e-2;          ///< Q_j = -q I
    double eps_feas = 1e-6;   ///< required min-eig of M_j and of P
    double p_max = 1e3;       ///< P <= p_max I
    double k_max = 2.0;       ///< |K_j(a,b)| <= k_max; <= 0 disables the cap
    double sr_max = 1e4;      ///< |S_j(a,b)|, |R_j(a,b)| <= sr_max
    bool structural_precheck = true;
    sdp::Options solver{};
};

struct SynthesisProblem {
    const SwitchedModel* model = nullptr;
    std::vector<Mat> Q;  ///< per mode; empty means -q I for every mode
    double gamma = 0.0;
    SynthesisOptions options{};
};

struct ModeCertificate {
    SwitchingVector sigma;
    Mat K, U, V, S, R, Q;
    double min_eig_M = 0.0;
    double equality_residual = 0.0;
};

struct ControllerSet {
    int n = 0;
    Structure structure = Structure::distributed;
    double gamma = 0.0;
    double margin = 0.0;  ///< optimal t with M_j >= t I for all j
    std::string topology = "nominal";
    Mat P;
    std::vector<ModeCertificate> modes;  ///< indexed by SwitchingVector::index()

    const ModeCertificate& mode(const SwitchingVector& s) const {
        if (s.index() >= modes.size())
            throw RuntimeFailure("no gain for switching vector " + s.str());
        return modes[s.index()];
    }
    const Mat& gain(const SwitchingVector& s) const { return mode(s).K; }
};

inline Mat sqrt_neg(const Mat& Q) {
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(-Q));
    if (es.eigenvalues().size() && es.eigenvalues()(0) <= 0)
        throw ModelError("Q must be negative definite");
    return es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() *
           es.eigenvectors().transpose();
}

/// Evaluates the design matrix of one mode. `H` enters only through A0.
inline Mat lmi_matrix(const ModeMatrices& m, const Mat& H, const Mat& P, const Mat& U,
                      const Mat& S, const Mat& R, const Mat& Qh, double gamma = 0.0) {
    const auto nx = m.A.rows(), ny = m.C.rows(), nw = m.B2.cols();
    const Mat A0 = m.A + m.B1 * H;
    const Mat BUC = m.B1 * U * m.C;
    Mat M(nx + nw + ny, nx + nw + ny);
    M.topLeftCorner(nx, nx) = -P * A0 - A0.transpose() * P - BUC - BUC.transpose() - 2.0 * gamma * P;
    M.block(0, nx, nx, nw) = -P * m.B2 - m.B1 * U * m.D + m.C.transpose() * S;
    M.block(0, nx + nw, nx, ny) = -m.C.transpose() * Qh;
    M.block(nx, nx, nw, nw) = m.D.transpose() * S + S.transpose() * m.D + R;
    M.block(nx, nx + nw, nw, ny) = -m.D.transpose() * Qh;
    M.block(nx + nw, nx + nw, ny, ny) = Mat::Identity(ny, ny);
    M.block(nx, 0, nw, nx) = M.block(0, nx, nx, nw).transpose();
    M.block(nx + nw, 0, ny, nx) = M.block(0, nx + nw, nx, ny).transpose();
    M.block(nx + nw, nx, ny, nw) = M.block(nx, nx + nw, nw, ny).transpose();
    return symmetrize(M);
}

/// Dissipation matrix of the closed loop x' = Ah x + Bh w, y = C x + D w:
/// [x;w]' Gamma [x;w] = s(y, w) - d/dt(x'Px).
inline Mat dissipation_matrix(const ModeMatrices& m, const Mat& H, const Mat& K, const Mat& P,
                              const Mat& S, const Mat& R, const Mat& Q, double gamma = 0.0) {
    const auto nx = m.A.rows(), nw = m.B2.cols();
    const Mat Ah = m.A + m.B1 * H + m.B1 * K * m.C;
    const Mat Bh = m.B2 + m.B1 * K * m.D;
    Mat G(nx + nw, nx + nw);
    G.topLeftCorner(nx, nx) =
        m.C.transpose() * Q * m.C - P * Ah - Ah.transpose() * P - 2.0 * gamma * P;
    G.topRightCorner(nx, nw) = m.C.transpose() * Q * m.D + m.C.transpose() * S - P * Bh;
    G.bottomLeftCorner(nw, nx) = G.topRightCorner(nx, nw).transpose();
    G.bottomRightCorner(nw, nw) =
        m.D.transpose() * Q * m.D + m.D.transpose() * S + S.transpose() * m.D + R;
    return symmetrize(G);
}

/// Largest spectral norm of B1_j * dH over the modes.
inline double gamma_for(const SwitchedModel& model, const Mat& dH) {
    double g = 0.0;
    for (const auto& m : model.modes) g = std::max(g, spectral_norm(m.B1 * dH));
    return g;
}

/// Modes with a direction e != 0 such that (A + B1 H) e = 0 and C e = 0. No
/// storage function can make M_j strictly positive along [e; 0; 0].
inline std::vector<SwitchingVector> structurally_infeasible_modes(const SwitchedModel& model) {
    std::vector<SwitchingVector> bad;
    for (const auto& m : model.modes) {
        Mat stacked(m.A.rows() + m.C.rows(), m.A.cols());
        stacked << m.A_closed(model.H), m.C;
        Eigen::JacobiSVD<Mat> svd(stacked);
        const Vec s = svd.singularValues();
        const double scale = std::max(1.0, s(0));
        if (s.size() < m.A.cols() || s(s.size() - 1) <= 1e-10 * scale) bad.push_back(m.sigma);
    }
    return bad;
}

namespace detail {

/// Orthonormal basis of {(P, v_1..v_m) : P B1_j = B1_j diag(v_j)} with P
/// symmetric, P given by its upper triangle.
struct EqualityBasis {
    std::vector<Mat> P;               ///< per basis vector
    std::vector<std::vector<Vec>> v;  ///< [basis][mode]
};

inline EqualityBasis equality_basis(const SwitchedModel& model) {
    const int nx = 3 * model.size(), nu = 2 * model.size();
    const int m = model.mode_count();
    const int np = nx * (nx + 1) / 2;
    std::vector<std::pair<int, int>> sym;
    Eigen::MatrixXi idx(nx, nx);
    for (int r = 0; r < nx; ++r)
        for (int c = r; c < nx; ++c) {
            idx(r, c) = idx(c, r) = static_cast<int>(sym.size());
            sym.push_back({r, c});
        }
    const int nz = np + m * nu;
    Mat G = Mat::Zero(nz, nz);  // L'L accumulated row by row
    Vec row(nz);
    for (int j = 0; j < m; ++j) {
        const Mat& B1 = model.modes[j].B1;
        for (int r = 0; r < nx; ++r)
            for (int c = 0; c < nu; ++c) {
                row.setZero();
                for (int s = 0; s < nx; ++s)
                    if (B1(s, c) != 0.0) row(idx(r, s)) += B1(s, c);
                row(np + j * nu + c) -= B1(r, c);
                if (row.cwiseAbs().maxCoeff() == 0.0) continue;
                G.selfadjointView<Eigen::Lower>().rankUpdate(row);
            }
    }
    G = G.selfadjointView<Eigen::Lower>();
    Eigen::SelfAdjointEigenSolver<Mat> es(G);
    const double top = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    EqualityBasis basis;
    for (int a = 0; a < nz; ++a) {
        if (es.eigenvalues()(a) > 1e-12 * top) break;
        const Vec z = es.eigenvectors().col(a);
        Mat P = Mat::Zero(nx, nx);
        for (int e = 0; e < np; ++e) P(sym[e].first, sym[e].second) = P(sym[e].second, sym[e].first) = z(e);
        std::vector<Vec> v(m);
        for (int j = 0; j < m; ++j) v[j] = z.segment(np + j * nu, nu);
        basis.P.push_back(P);
        basis.v.push_back(std::move(v));
    }
    return basis;
}

inline sdp::SymSparse sparse_of(const Mat& M, double scale = 1.0) {
    sdp::SymSparse s;
    for (int c = 0; c < M.cols(); ++c)
        for (int r = 0; r <= c; ++r)
            if (M(r, c) != 0.0) s.add(r, c, scale * M(r, c));
    return s;
}

}  // namespace detail

inline Mat mode_Q(const SynthesisProblem& pr, int j) {
    const int ny = 2 * pr.model->size();
    if (pr.Q.empty()) return -pr.options.q * Mat::Identity(ny, ny);
    const Mat& Q = pr.Q.at(j);
    if (Q.rows() != ny || Q.cols() != ny) throw ModelError("Q has wrong size");
    if (min_eigenvalue(-Q) <= 0) throw ModelError("Q must be negative definite");
    return Q;
}

/// Solves the design LMIs for every mode with a common P.
inline ControllerSet synthesize(const SynthesisProblem& pr) {
    if (!pr.model) throw ModelError("synthesis problem has no model");
    const SwitchedModel& model = *pr.model;
    const auto& o = pr.options;
    const int n = model.size(), nx = 3 * n, nu = 2 * n;
    const int nmodes = model.mode_count();

    ControllerSet cs;
    cs.n = n;
    cs.structure = o.structure;
    cs.gamma = pr.gamma;
    cs.topology = model.plant ? model.plant->graph().topology_id() : "nominal";
    if (n == 0) {
        cs.P = Mat(0, 0);
        return cs;
    }
    if (pr.gamma < 0) throw ModelError("robustness margin must be non-negative");

    for (const auto& m : model.modes) check_rank(m);

    if (o.structural_precheck) {
        const auto bad = structurally_infeasible_modes(model);
        if (!bad.empty()) {
            std::string list;
            for (const auto& s : bad) list += (list.empty() ? "" : ", ") + s.str();
            throw InfeasibleError(
                "structurally infeasible: modes [" + list +
                "] have an undamped direction invisible to the outputs "
                "(set omega_propagation = propagated and angle_leakage > 0)");
        }
    }

    const SparsityPattern pattern = o.structure == Structure::distributed
                                        ? SparsityPattern::from_graph(model.plant->graph())
                                        : SparsityPattern::dense(n);
    const auto basis = detail::equality_basis(model);
    const int ntheta = static_cast<int>(basis.P.size());
    if (ntheta == 0) throw InfeasibleError("P B1 = B1 V admits only P = 0");

    sdp::Problem prob;
    std::vector<int> theta(ntheta);
    for (auto& t : theta) t = prob.add_var(-1);
    const int tvar = prob.add_var(-1, 1.0);

    const double p_min = std::max(o.eps_feas, 1e-9);
    {
        sdp::Block lo, hi;
        lo.dim = hi.dim = nx;
        lo.C = -p_min * Mat::Identity(nx, nx);
        hi.C = o.p_max * Mat::Identity(nx, nx);
        for (int a = 0; a < ntheta; ++a) {
            lo.terms.push_back({theta[a], detail::sparse_of(basis.P[a], -1.0)});
            hi.terms.push_back({theta[a], detail::sparse_of(basis.P[a], 1.0)});
        }
        prob.blocks.push_back(std::move(lo));
        prob.blocks.push_back(std::move(hi));
    }

    struct ModeVars {
        std::vector<std::pair<int, int>> u_pos;
        std::vector<int> u, s, r;  // variable indices
    };
    std::vector<ModeVars> vars(nmodes);
    std::vector<Mat> Qh(nmodes), Qm(nmodes);

    const Mat zero_nu = Mat::Zero(nu, nu), zero_nx = Mat::Zero(nx, nx);
    for (int j = 0; j < nmodes; ++j) {
        const auto& mm = model.modes[j];
        Qm[j] = mode_Q(pr, j);
        Qh[j] = sqrt_neg(Qm[j]);
        auto& mv = vars[j];
        for (int a = 0; a < nu; ++a)
            for (int b = 0; b < nu; ++b)
                if (pattern.entry_allowed(a, b)) {
                    mv.u_pos.push_back({a, b});
                    mv.u.push_back(prob.add_var(j));
                }
        for (int a = 0; a < nu * nu; ++a) mv.s.push_back(prob.add_var(j));
        for (int a = 0; a < nu; ++a)
            for (int b = a; b < nu; ++b) mv.r.push_back(prob.add_var(j));

        const Mat M0 = lmi_matrix(mm, model.H, zero_nx, zero_nu, zero_nu, zero_nu, Qh[j], pr.gamma);
        const int dim = static_cast<int>(M0.rows());
        sdp::Block blk;
        blk.dim = dim;
        blk.C = M0;
        Mat E = Mat::Identity(dim, dim);
        blk.terms.push_back({tvar, detail::sparse_of(E)});
        auto linear_part = [&](const Mat& P, const Mat& U, const Mat& S, const Mat& R) {
            return Mat(lmi_matrix(mm, model.H, P, U, S, R, Qh[j], pr.gamma) - M0);
        };
        for (int a = 0; a < ntheta; ++a)
            blk.terms.push_back(
                {theta[a], detail::sparse_of(linear_part(basis.P[a], zero_nu, zero_nu, zero_nu), -1.0)});
        for (std::size_t e = 0; e < mv.u.size(); ++e) {
            Mat U = zero_nu;
            U(mv.u_pos[e].first, mv.u_pos[e].second) = 1.0;
            blk.terms.push_back({mv.u[e], detail::sparse_of(linear_part(zero_nx, U, zero_nu, zero_nu), -1.0)});
        }
        for (int a = 0; a < nu * nu; ++a) {
            Mat S = zero_nu;
            S(a / nu, a % nu) = 1.0;
            blk.terms.push_back({mv.s[a], detail::sparse_of(linear_part(zero_nx, zero_nu, S, zero_nu), -1.0)});
        }
        {
            int e = 0;
            for (int a = 0; a < nu; ++a)
                for (int b = a; b < nu; ++b, ++e) {
                    Mat R = zero_nu;
                    R(a, b) = R(b, a) = 1.0;
                    blk.terms.push_back(
                        {mv.r[e], detail::sparse_of(linear_part(zero_nx, zero_nu, zero_nu, R), -1.0)});
                }
        }
        for (auto& [i, A] : blk.terms) A.compress();
        prob.blocks.push_back(std::move(blk));

        // Linear rows: V_aa >= p_min, |U_ab| <= k_max V_aa, |S|, |R| <= sr_max.
        sdp::Block lp;
        lp.lp = true;
        std::vector<std::map<int, double>> rows;
        std::vector<double> rhs;
        auto v_row = [&](int a, double scale, std::map<int, double>& row) {
            for (int c = 0; c < ntheta; ++c)
                if (basis.v[c][j](a) != 0.0) row[theta[c]] += scale * basis.v[c][j](a);
        };
        for (int a = 0; a < nu; ++a) {
            std::map<int, double> row;  // Z = -p_min + V_aa
            v_row(a, -1.0, row);
            rows.push_back(row);
            rhs.push_back(-p_min);
        }
        if (o.k_max > 0) {
            for (std::size_t e = 0; e < mv.u.size(); ++e) {
                const int a = mv.u_pos[e].first;
                for (double sgn : {1.0, -1.0}) {
                    std::map<int, double> row;  // Z = k_max V_aa - sgn U_ab
                    v_row(a, -o.k_max, row);
                    row[mv.u[e]] += sgn;
                    rows.push_back(row);
                    rhs.push_back(0.0);
                }
            }
        }
        for (const auto* group : {&mv.s, &mv.r})
            for (int vi : *group)
                for (double sgn : {1.0, -1.0}) {
                    rows.push_back({{vi, sgn}});
                    rhs.push_back(o.sr_max);
                }
        lp.dim = static_cast<int>(rows.size());
        lp.C = Mat::Zero(lp.dim, 1);
        std::map<int, sdp::SymSparse> by_var;
        for (int r = 0; r < lp.dim; ++r) {
            lp.C(r, 0) = rhs[r];
            for (const auto& [vi, c] : rows[r]) by_var[vi].add(r, r, c);
        }
        for (auto& [vi, A] : by_var) lp.terms.push_back({vi, std::move(A)});
        prob.blocks.push_back(std::move(lp));
    }

    // A stalled solve is still usable when its dual iterate is feasible: the
    // certificate below is recomputed from y alone.
    const auto sol = sdp::solve(prob, o.solver);
    if (sol.status != sdp::Status::optimal && !(sol.dual_infeasibility <= 1e-7))
        throw ConvergenceError(std::string("SDP solver stopped (") + sdp::to_string(sol.status) +
                                   "), dual infeasibility " +
                                   std::to_string(sol.dual_infeasibility),
                               sol.dual_infeasibility);

    const Vec& y = sol.y;
    cs.margin = y(tvar);
    cs.P = Mat::Zero(nx, nx);
    for (int a = 0; a < ntheta; ++a) cs.P += y(theta[a]) * basis.P[a];
    cs.P = symmetrize(cs.P);
    cs.modes.resize(nmodes);
    std::vector<std::string> binding;
    for (int j = 0; j < nmodes; ++j) {
        const auto& mm = model.modes[j];
        const auto& mv = vars[j];
        auto& mc = cs.modes[j];
        mc.sigma = mm.sigma;
        Vec v = Vec::Zero(nu);
        for (int a = 0; a < ntheta; ++a) v += y(theta[a]) * basis.v[a][j];
        mc.V = v.asDiagonal();
        mc.U = Mat::Zero(nu, nu);
        for (std::size_t e = 0; e < mv.u.size(); ++e)
            mc.U(mv.u_pos[e].first, mv.u_pos[e].second) = y(mv.u[e]);
        mc.S.resize(nu, nu);
        for (int a = 0; a < nu * nu; ++a) mc.S(a / nu, a % nu) = y(mv.s[a]);
        mc.R.resize(nu, nu);
        {
            int e = 0;
            for (int a = 0; a < nu; ++a)
                for (int b = a; b < nu; ++b, ++e) mc.R(a, b) = mc.R(b, a) = y(mv.r[e]);
        }
        mc.Q = Qm[j];
        mc.K = mc.U;
        for (int a = 0; a < nu; ++a) mc.K.row(a) /= v(a);
        mc.min_eig_M = min_eigenvalue(lmi_matrix(mm, model.H, cs.P, mc.U, mc.S, mc.R, Qh[j], pr.gamma));
        mc.equality_residual = (cs.P * mm.B1 - mm.B1 * mc.V).cwiseAbs().maxCoeff();
        if (mc.min_eig_M < cs.margin + 1e-6 * std::max(1.0, std::abs(cs.margin)))
            binding.push_back(mm.sigma.str());
    }

    double worst = INFINITY;
    for (const auto& mc : cs.modes) worst = std::min(worst, mc.min_eig_M);
    const double pmin_eig = min_eigenvalue(cs.P);
    if (!(worst >= o.eps_feas) || !(pmin_eig >= o.eps_feas)) {
        std::string list;
        for (const auto& s : binding) list += (list.empty() ? "" : ", ") + s;
        std::ostringstream msg;
        msg << "design LMIs infeasible: best margin " << cs.margin << " (min eig M " << worst
            << ", min eig P " << pmin_eig << ", required " << o.eps_feas
            << "); binding modes [" << list << "]; solver " << sdp::to_string(sol.status);
        throw InfeasibleError(msg.str());
    }
    return cs;
}

inline ControllerSet synthesize(const SwitchedModel& model, const SynthesisOptions& o = {},
                                double gamma = 0.0) {
    SynthesisProblem pr;
    pr.model = &model;
    pr.options = o;
    pr.gamma = gamma;
    return synthesize(pr);
}

/// Robust design against a perturbed Jacobian: gamma = max_j ||B1_j (H - H_new)||_2.
inline ControllerSet synthesize_robust(const SwitchedModel& model, const Mat& H_new,
                                       const SynthesisOptions& o = {}) {
    if (H_new.rows() != model.H.rows() || H_new.cols() != model.H.cols())
        throw ModelError("perturbed Jacobian has wrong size");
    return synthesize(model, o, gamma_for(model, model.H - H_new));
}

struct ContingencyResult {
    std::string name;  ///< switch opened
    bool skipped = false;
    std::string warning;
    double gamma = 0.0;
    std::optional<OperatingPoint> op;
    Mat H_new;
};

struct GammaSearch {
    double gamma = 0.0;
    std::string argmax;
    std::vector<ContingencyResult> contingencies;
};

/// N-1 scan: opens each listed switch, re-solves the power flow with the same
/// non-slack targets and takes the largest ||B1_j (H - H_new)||_2.
inline GammaSearch worst_case_gamma(const SwitchedModel& model,
                                    const std::vector<std::string>& contingencies, int slack) {
    GammaSearch out;
    if (!model.plant) throw ModelError("switched model has no plant");
    const auto& g = model.plant->graph();
    for (const auto& name : contingencies) {
        ContingencyResult cr;
        cr.name = name;
        try {
            const auto g2 = g.with_switch(name, false);
            const auto op2 = solve_operating_point(g2, targets_from(model.plant->op(), slack));
            cr.H_new = jacobian_H(g2, op2);
            cr.gamma = gamma_for(model, model.H - cr.H_new);
            cr.op = op2;
        } catch (const ConvergenceError& e) {
            cr.skipped = true;
            cr.warning = "contingency " + name + " skipped: " + e.what();
        }
        if (!cr.skipped && (out.argmax.empty() || cr.gamma > out.gamma)) {
            out.gamma = cr.gamma;
            out.argmax = name;
        }
        out.contingencies.push_back(std::move(cr));
    }
    return out;
}

struct ModeReport {
    SwitchingVector sigma;
    double min_eig_M = 0.0;
    double min_eig_dissipation = 0.0;
    bool schur_consistent = true;
    double equality_residual = 0.0;
    double cond_V = 0.0;
    bool sparsity_ok = true;
};

struct CertificateReport {
    double min_eig_P = 0.0;
    double eps_feas = 1e-6;
    double gamma = 0.0;
    std::vector<ModeReport> modes;

    double worst_M() const {
        double w = INFINITY;
        for (const auto& m : modes) w = std::min(w, m.min_eig_M);
        return modes.empty() ? 0.0 : w;
    }
    double worst_equality() const {
        double w = 0.0;
        for (const auto& m : modes) w = std::max(w, m.equality_residual);
        return w;
    }
    bool sparsity_ok() const {
        for (const auto& m : modes)
            if (!m.sparsity_ok) return false;
        return true;
    }
    bool schur_ok() const {
        for (const auto& m : modes)
            if (!m.schur_consistent) return false;
        return true;
    }
    bool passed() const {
        return min_eig_P > 0 && (modes.empty() || worst_M() >= eps_feas) &&
               worst_equality() <= 1e-6 && sparsity_ok() && schur_ok();
    }

    std::string str() const {
        std::ostringstream s;
        s << "min_eig_P " << min_eig_P << "\n"
          << "gamma " << gamma << "\n"
          << "eps_feas " << eps_feas << "\n";
        for (const auto& m : modes)
            s << "mode " << m.sigma.str() << "  min_eig_M " << m.min_eig_M << "  min_eig_Gamma "
              << m.min_eig_dissipation << "  schur " << (m.schur_consistent ? "ok" : "MISMATCH")
              << "  eq_residual " << m.equality_residual << "  cond_V " << m.cond_V
              << "  sparsity " << (m.sparsity_ok ? "ok" : "VIOLATED") << "\n";
        s << "result " << (passed() ? "PASS" : "FAIL") << "\n";
        return s.str();
    }
};

/// Re-checks a controller set against a model (possibly a different topology
/// than the one it was designed for). U is recomputed as V K so that edits to
/// K are seen by the check. Sparsity is judged against `pattern` when given
/// (e.g. the design topology), otherwise against the model's own graph.
inline CertificateReport verify_feasibility(const ControllerSet& cs, const SwitchedModel& model,
                                            double gamma = 0.0, double eps_feas = 1e-6,
                                            const SparsityPattern* pattern = nullptr) {
    CertificateReport rep;
    rep.eps_feas = eps_feas;
    rep.gamma = gamma;
    if (cs.n != model.size()) throw ModelError("controller set and model sizes differ");
    if (static_cast<int>(cs.modes.size()) != model.mode_count())
        throw ModelError("controller set lacks gains for some modes");
    rep.min_eig_P = cs.n ? min_eigenvalue(cs.P) : 0.0;
    const SparsityPattern own = cs.structure == Structure::distributed
                                    ? SparsityPattern::from_graph(model.plant->graph())
                                    : SparsityPattern::dense(cs.n);
    const SparsityPattern& pat = pattern ? *pattern : own;
    for (int j = 0; j < model.mode_count(); ++j) {
        const auto& mm = model.modes[j];
        const auto& mc = cs.modes[j];
        ModeReport r;
        r.sigma = mm.sigma;
        const Mat U = mc.V * mc.K;
        const Mat M = lmi_matrix(mm, model.H, cs.P, U, mc.S, mc.R, sqrt_neg(mc.Q), gamma);
        r.min_eig_M = min_eigenvalue(M);
        r.min_eig_dissipation =
            min_eigenvalue(dissipation_matrix(mm, model.H, mc.K, cs.P, mc.S, mc.R, mc.Q, gamma));
        r.schur_consistent = (r.min_eig_M > 0) == (r.min_eig_dissipation > 0);
        r.equality_residual = (cs.P * mm.B1 - mm.B1 * mc.V).cwiseAbs().maxCoeff();
        const Vec d = mc.V.diagonal().cwiseAbs();
        const bool diag = (mc.V - Mat(mc.V.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0;
        r.cond_V = (diag && d.minCoeff() > 0) ? d.maxCoeff() / d.minCoeff() : INFINITY;
        r.sparsity_ok = pat.conforms(mc.K);
        rep.modes.push_back(r);
    }
    return rep;
}

}  // namespace mafd
