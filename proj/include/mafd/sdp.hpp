#pragma once

// Small primal-dual interior-point solver for block-structured SDPs in the
// dual form
//
//   maximize b'y  subject to  Z_l = C_l - sum_i y_i A_li  >= 0  (every block l)
//
// with PSD blocks and non-negative orthant (LP) blocks. Search direction is
// HKM with Mehrotra predictor-corrector. Variables carry a group tag: group
// -1 is shared, every other group is local, and a block may touch the shared
// variables plus at most one local group. The Schur complement is then an
// arrowhead matrix and is solved by eliminating the local groups.

#include "mafd/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

namespace mafd::sdp {

struct Entry {
    int row, col;  ///< row <= col
    double value;
};

/// Symmetric sparse coefficient, upper triangle only. For LP blocks only
/// diagonal entries (r, r) are allowed; r is the row of the inequality.
struct SymSparse {
    std::vector<Entry> entries;

    void add(int r, int c, double v) {
        if (v == 0.0) return;
        if (r > c) std::swap(r, c);
        entries.push_back({r, c, v});
    }

    /// Merges duplicates and drops zeros.
    void compress() {
        std::map<std::pair<int, int>, double> acc;
        for (const auto& e : entries) acc[{e.row, e.col}] += e.value;
        entries.clear();
        for (const auto& [rc, v] : acc)
            if (v != 0.0) entries.push_back({rc.first, rc.second, v});
    }

    /// <this, G>; G is dense dim x dim, or a dim x 1 column for LP blocks.
    double dot(const Mat& G) const {
        double s = 0.0;
        if (G.cols() == 1 && G.rows() != 1) {
            for (const auto& e : entries) s += e.value * G(e.row, 0);
            return s;
        }
        for (const auto& e : entries)
            s += e.row == e.col ? e.value * G(e.row, e.col)
                                : e.value * (G(e.row, e.col) + G(e.col, e.row));
        return s;
    }
};

struct Block {
    int dim = 0;
    bool lp = false;  ///< orthant block
    Mat C;            ///< dim x dim, or dim x 1 for LP blocks
    std::vector<std::pair<int, SymSparse>> terms;  ///< variable index -> A_li
};

struct Problem {
    Vec b;
    std::vector<int> group;  ///< per variable; -1 = shared
    std::vector<Block> blocks;

    int num_vars() const { return static_cast<int>(b.size()); }

    int add_var(int g, double objective = 0.0) {
        b.conservativeResize(b.size() + 1);
        b(b.size() - 1) = objective;
        group.push_back(g);
        return static_cast<int>(b.size()) - 1;
    }
};

struct Options {
    int max_iterations = 120;
    double tolerance = 1e-8;
    double step_fraction = 0.98;
    bool verbose = false;
};

enum class Status { optimal, max_iterations, numerical_failure };

inline const char* to_string(Status s) {
    switch (s) {
        case Status::optimal: return "optimal";
        case Status::max_iterations: return "max_iterations";
        case Status::numerical_failure: return "numerical_failure";
    }
    return "?";
}

struct Result {
    Status status = Status::numerical_failure;
    Vec y;
    std::vector<Mat> X, Z;  ///< LP blocks stored as columns
    double primal_objective = 0.0, dual_objective = 0.0;
    double primal_infeasibility = INFINITY, dual_infeasibility = INFINITY, gap = INFINITY;
    int iterations = 0;
};

namespace detail {

// Block algebra. PSD blocks are dense symmetric matrices; LP blocks are
// columns and every product is element-wise.

inline Mat identity(const Block& blk, double s) {
    return blk.lp ? Mat(Mat::Constant(blk.dim, 1, s)) : Mat(s * Mat::Identity(blk.dim, blk.dim));
}

inline Mat adjoint(const Block& blk, const Vec& y) {
    Mat S = blk.lp ? Mat::Zero(blk.dim, 1) : Mat::Zero(blk.dim, blk.dim);
    for (const auto& [i, A] : blk.terms) {
        const double yi = y(i);
        if (yi == 0.0) continue;
        for (const auto& e : A.entries) {
            if (blk.lp) {
                S(e.row, 0) += yi * e.value;
                continue;
            }
            S(e.row, e.col) += yi * e.value;
            if (e.row != e.col) S(e.col, e.row) += yi * e.value;
        }
    }
    return S;
}

inline Mat mul(const Block& blk, const Mat& a, const Mat& b) {
    return blk.lp ? Mat(a.cwiseProduct(b)) : Mat(a * b);
}

inline Mat sym(const Block& blk, const Mat& a) { return blk.lp ? a : symmetrize(a); }

inline double inner(const Mat& X, const Mat& Z) { return X.cwiseProduct(Z).sum(); }

/// Largest alpha in (0, inf] with X + alpha dX >= 0.
inline double max_step(const Block& blk, const Mat& X, const Mat& dX) {
    if (blk.lp) {
        double a = INFINITY;
        for (int r = 0; r < blk.dim; ++r)
            if (dX(r, 0) < 0) a = std::min(a, -X(r, 0) / dX(r, 0));
        return a;
    }
    Eigen::LLT<Mat> llt(X);
    if (llt.info() != Eigen::Success) return 0.0;
    const Mat L = llt.matrixL();
    Mat W = L.triangularView<Eigen::Lower>().solve(dX);
    W = L.triangularView<Eigen::Lower>().solve(W.transpose()).transpose();
    const double lmin = min_eigenvalue(W);
    return lmin >= 0 ? INFINITY : -1.0 / lmin;
}

inline bool invert_pd(const Block& blk, const Mat& Z, Mat& Zi) {
    if (blk.lp) {
        if (!(Z.array() > 0).all()) return false;
        Zi = Z.cwiseInverse();
        return true;
    }
    Eigen::LLT<Mat> llt(Z);
    if (llt.info() != Eigen::Success) return false;
    Zi = symmetrize(llt.solve(Mat::Identity(blk.dim, blk.dim)));
    return true;
}

/// Arrowhead-structured Schur complement.
class Schur {
public:
    explicit Schur(const Problem& p) : p_(p) {
        int ng = 0;
        for (int g : p.group) ng = std::max(ng, g + 1);
        local_.assign(ng, {});
        pos_.assign(p.num_vars(), -1);
        for (int i = 0; i < p.num_vars(); ++i) {
            if (p.group[i] < 0) {
                pos_[i] = static_cast<int>(shared_.size());
                shared_.push_back(i);
            } else {
                auto& l = local_[p.group[i]];
                pos_[i] = static_cast<int>(l.size());
                l.push_back(i);
            }
        }
        for (const auto& blk : p.blocks) {
            int g = -1;
            for (const auto& [i, A] : blk.terms) {
                const int gi = p.group[i];
                if (gi < 0) continue;
                if (g >= 0 && g != gi)
                    throw ModelError("SDP block couples two local variable groups");
                g = gi;
            }
        }
        lp_rows_.resize(p.blocks.size());
        for (std::size_t l = 0; l < p.blocks.size(); ++l) {
            const Block& blk = p.blocks[l];
            if (!blk.lp) continue;
            lp_rows_[l].resize(blk.dim);
            for (const auto& [i, A] : blk.terms)
                for (const auto& e : A.entries) lp_rows_[l][e.row].push_back({i, e.value});
        }
    }

    void reset() {
        const int ns = static_cast<int>(shared_.size());
        M00_ = Mat::Zero(ns, ns);
        Mgg_.assign(local_.size(), {});
        Mg0_.assign(local_.size(), {});
        for (std::size_t g = 0; g < local_.size(); ++g) {
            const int nl = static_cast<int>(local_[g].size());
            Mgg_[g] = Mat::Zero(nl, nl);
            Mg0_[g] = Mat::Zero(nl, ns);
        }
    }

    void add(int i, int k, double v) {
        const int gi = p_.group[i], gk = p_.group[k];
        if (gi < 0 && gk < 0)
            M00_(pos_[i], pos_[k]) += v;
        else if (gi >= 0 && gk >= 0)
            Mgg_[gi](pos_[i], pos_[k]) += v;
        else if (gi >= 0)
            Mg0_[gi](pos_[i], pos_[k]) += v;
        // (shared, local) is the transpose of (local, shared)
    }

    /// Accumulates tr(A_i X A_k Zi) for one block.
    void accumulate(std::size_t l, const Mat& X, const Mat& Zi) {
        const Block& blk = p_.blocks[l];
        if (blk.lp) {
            for (int r = 0; r < blk.dim; ++r) {
                const double s = X(r, 0) * Zi(r, 0);
                for (const auto& [i, ai] : lp_rows_[l][r])
                    for (const auto& [k, ak] : lp_rows_[l][r]) add(i, k, s * ai * ak);
            }
            return;
        }
        const int n = blk.dim;
        std::vector<int> cols;
        Mat XA = Mat::Zero(n, n), G(n, n);
        for (const auto& [k, Ak] : blk.terms) {
            // G = X A_k Zi built from the non-zero columns of X A_k.
            cols.clear();
            for (const auto& e : Ak.entries) {
                cols.push_back(e.col);
                if (e.row != e.col) cols.push_back(e.row);
            }
            std::sort(cols.begin(), cols.end());
            cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
            for (int c : cols) XA.col(c).setZero();
            for (const auto& e : Ak.entries) {
                XA.col(e.col) += e.value * X.col(e.row);
                if (e.row != e.col) XA.col(e.row) += e.value * X.col(e.col);
            }
            G.setZero();
            for (int c : cols) G.noalias() += XA.col(c) * Zi.row(c);
            for (const auto& [i, Ai] : blk.terms) add(i, k, Ai.dot(G));
        }
    }

    /// Solves M dy = r. Returns false if a pivot fails.
    bool solve(const Vec& r, Vec& dy) {
        const int ns = static_cast<int>(shared_.size());
        Mat S = M00_;
        Vec rs(ns);
        for (int a = 0; a < ns; ++a) rs(a) = r(shared_[a]);
        std::vector<Mat> W(local_.size());
        std::vector<Vec> wr(local_.size());
        for (std::size_t g = 0; g < local_.size(); ++g) {
            const int nl = static_cast<int>(local_[g].size());
            if (nl == 0) continue;
            Mat Mg = symmetrize(Mgg_[g]);
            Mg.diagonal().array() += 1e-14 * (1.0 + Mg.diagonal().cwiseAbs().maxCoeff());
            Eigen::LLT<Mat> fac(Mg);
            if (fac.info() != Eigen::Success) return false;
            Vec rg(nl);
            for (int a = 0; a < nl; ++a) rg(a) = r(local_[g][a]);
            W[g] = fac.solve(Mg0_[g]);
            wr[g] = fac.solve(rg);
            S.noalias() -= Mg0_[g].transpose() * W[g];
            rs.noalias() -= Mg0_[g].transpose() * wr[g];
        }
        Vec ys = Vec::Zero(ns);
        if (ns > 0) {
            S = symmetrize(S);
            S.diagonal().array() += 1e-14 * (1.0 + S.diagonal().cwiseAbs().maxCoeff());
            Eigen::LDLT<Mat> ldlt(S);
            if (ldlt.info() != Eigen::Success) return false;
            ys = ldlt.solve(rs);
        }
        dy.resize(p_.num_vars());
        for (int a = 0; a < ns; ++a) dy(shared_[a]) = ys(a);
        for (std::size_t g = 0; g < local_.size(); ++g) {
            const int nl = static_cast<int>(local_[g].size());
            if (nl == 0) continue;
            const Vec yg = wr[g] - W[g] * ys;
            for (int a = 0; a < nl; ++a) dy(local_[g][a]) = yg(a);
        }
        return dy.allFinite();
    }

private:
    const Problem& p_;
    std::vector<int> shared_, pos_;
    std::vector<std::vector<int>> local_;
    std::vector<std::vector<std::vector<std::pair<int, double>>>> lp_rows_;
    Mat M00_;
    std::vector<Mat> Mgg_, Mg0_;
};

}  // namespace detail

inline void validate(const Problem& p) {
    const int m = p.num_vars();
    if (static_cast<int>(p.group.size()) != m) throw ModelError("SDP group tags missing");
    for (const auto& blk : p.blocks) {
        const int want_cols = blk.lp ? 1 : blk.dim;
        if (blk.C.rows() != blk.dim || blk.C.cols() != want_cols)
            throw ModelError("SDP block constant has wrong size");
        for (const auto& [i, A] : blk.terms) {
            if (i < 0 || i >= m) throw ModelError("SDP term references unknown variable");
            for (const auto& e : A.entries)
                if (e.row < 0 || e.col >= blk.dim || e.row > e.col || (blk.lp && e.row != e.col))
                    throw ModelError("SDP coefficient entry out of range");
        }
    }
}

inline Result solve(const Problem& p, const Options& opt = {}) {
    using namespace detail;
    validate(p);
    const int m = p.num_vars();
    const std::size_t nb = p.blocks.size();

    Result res;
    res.y = Vec::Zero(m);
    res.X.resize(nb);
    res.Z.resize(nb);

    double total_dim = 0.0, cnorm = 0.0, amax = 0.0;
    for (const auto& blk : p.blocks) {
        total_dim += blk.dim;
        cnorm = std::max(cnorm, blk.C.norm());
        for (const auto& [i, A] : blk.terms)
            for (const auto& e : A.entries) amax = std::max(amax, std::abs(e.value));
    }
    if (total_dim == 0) {
        res.status = Status::optimal;
        return res;
    }
    const double bnorm = p.b.size() ? p.b.norm() : 0.0;
    const double xi = std::max({10.0, std::sqrt(total_dim), bnorm / (1.0 + amax)});
    const double eta = std::max({10.0, std::sqrt(total_dim), cnorm});
    for (std::size_t l = 0; l < nb; ++l) {
        res.X[l] = identity(p.blocks[l], xi);
        res.Z[l] = identity(p.blocks[l], eta);
    }

    Schur schur(p);
    std::vector<Mat> Zi(nb), Rd(nb), dXa(nb), dZa(nb), dX(nb), dZ(nb), T(nb);
    Vec& y = res.y;
    Vec dy_;

    // Direction for M dy = rp - A(T), T = sigma*mu*Zi - X - X Rd Zi [- dXa dZa Zi];
    // then dZ = Rd - A*(dy), dX = T + X A*(dy) Zi. Returns the step lengths.
    auto direction = [&](const Vec& rp, double sigma_mu, bool corrector, std::vector<Mat>& outX,
                         std::vector<Mat>& outZ, double& ap, double& ad) -> bool {
        Vec rhs = rp;
        for (std::size_t l = 0; l < nb; ++l) {
            const Block& blk = p.blocks[l];
            T[l] = -res.X[l] - mul(blk, mul(blk, res.X[l], Rd[l]), Zi[l]);
            if (sigma_mu != 0.0) T[l] += sigma_mu * Zi[l];
            if (corrector) T[l] -= mul(blk, mul(blk, dXa[l], dZa[l]), Zi[l]);
            const Mat Ts = sym(blk, T[l]);
            for (const auto& [i, A] : blk.terms) rhs(i) -= A.dot(Ts);
        }
        Vec dy;
        if (!schur.solve(rhs, dy)) return false;
        ap = ad = INFINITY;
        for (std::size_t l = 0; l < nb; ++l) {
            const Block& blk = p.blocks[l];
            const Mat Ady = adjoint(blk, dy);
            outZ[l] = Rd[l] - Ady;
            outX[l] = sym(blk, T[l] + mul(blk, mul(blk, res.X[l], Ady), Zi[l]));
            ap = std::min(ap, max_step(blk, res.X[l], outX[l]));
            ad = std::min(ad, max_step(blk, res.Z[l], outZ[l]));
        }
        dy_ = std::move(dy);
        return true;
    };

    for (int it = 0; it <= opt.max_iterations; ++it) {
        res.iterations = it;
        Vec rp = p.b;
        double pobj = 0.0, xz = 0.0, rdn = 0.0;
        for (std::size_t l = 0; l < nb; ++l) {
            const Block& blk = p.blocks[l];
            for (const auto& [i, A] : blk.terms) rp(i) -= A.dot(res.X[l]);
            Rd[l] = blk.C - res.Z[l] - adjoint(blk, y);
            pobj += inner(blk.C, res.X[l]);
            xz += inner(res.X[l], res.Z[l]);
            rdn += Rd[l].squaredNorm();
        }
        const double dobj = p.b.dot(y);
        const double mu = xz / total_dim;
        res.primal_objective = pobj;
        res.dual_objective = dobj;
        res.primal_infeasibility = rp.norm() / (1.0 + bnorm);
        res.dual_infeasibility = std::sqrt(rdn) / (1.0 + cnorm);
        res.gap = std::abs(pobj - dobj) / (1.0 + std::abs(pobj) + std::abs(dobj));
        if (opt.verbose)
            std::fprintf(stderr, "sdp %3d  pobj %+.8e  dobj %+.8e  gap %.2e  pinf %.2e  dinf %.2e\n",
                         it, pobj, dobj, res.gap, res.primal_infeasibility,
                         res.dual_infeasibility);
        if (res.gap < opt.tolerance && res.primal_infeasibility < opt.tolerance &&
            res.dual_infeasibility < opt.tolerance) {
            res.status = Status::optimal;
            return res;
        }
        if (it == opt.max_iterations) break;

        schur.reset();
        for (std::size_t l = 0; l < nb; ++l) {
            if (!invert_pd(p.blocks[l], res.Z[l], Zi[l])) {
                if (opt.verbose) std::fprintf(stderr, "sdp: Z block %zu not positive definite\n", l);
                res.status = Status::numerical_failure;
                return res;
            }
            schur.accumulate(l, res.X[l], Zi[l]);
        }

        double ap, ad;
        if (!direction(rp, 0.0, false, dXa, dZa, ap, ad)) {
            if (opt.verbose) std::fprintf(stderr, "sdp: predictor Schur solve failed\n");
            res.status = Status::numerical_failure;
            return res;
        }
        ap = std::min(1.0, ap);
        ad = std::min(1.0, ad);
        double xz_aff = 0.0;
        for (std::size_t l = 0; l < nb; ++l)
            xz_aff += inner(res.X[l] + ap * dXa[l], res.Z[l] + ad * dZa[l]);
        const double sigma = std::clamp(std::pow(std::max(xz_aff, 0.0) / total_dim / mu, 3.0), 0.0, 1.0);

        if (!direction(rp, sigma * mu, true, dX, dZ, ap, ad)) {
            if (opt.verbose) std::fprintf(stderr, "sdp: corrector Schur solve failed\n");
            res.status = Status::numerical_failure;
            return res;
        }
        ap = std::min(1.0, opt.step_fraction * ap);
        ad = std::min(1.0, opt.step_fraction * ad);
        if (!(ap > 0) || !(ad > 0)) {
            if (opt.verbose) std::fprintf(stderr, "sdp: zero step (%g, %g)\n", ap, ad);
            res.status = Status::numerical_failure;
            return res;
        }
        for (std::size_t l = 0; l < nb; ++l) {
            res.X[l] += ap * dX[l];
            res.Z[l] += ad * dZ[l];
        }
        y += ad * dy_;
    }
    res.status = Status::max_iterations;
    return res;
}

}  // namespace mafd::sdp
