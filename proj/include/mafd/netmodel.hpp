#pragma once

// Microgrid interconnection: admittance graph, coupled AC power flow,
// Newton operating-point solver and the injection Jacobian H.

#include "mafd/types.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace mafd {

enum class LineModel {
    admittance_entry,  ///< value is Y_jk itself, placed at (j,k) and (k,j)
    series_impedance,  ///< value is r + jx; stamped as -y off-diagonal, +y on both diagonals
};

struct Line {
    std::string name;
    int from = 0;
    int to = 0;
    Complex value{};
    LineModel model = LineModel::series_impedance;
    std::string switch_name;  ///< empty: not switchable
};

/// PCC buses, neighbour sets and complex admittances of a microgrid network.
///
/// Y is rebuilt from the line list whenever switch states change, so opening
/// and reclosing a switch reproduces the original matrix bit for bit.
class AdmittanceGraph {
public:
    AdmittanceGraph() = default;

    AdmittanceGraph(std::vector<std::string> bus_names, std::vector<Line> lines,
                    std::vector<Complex> shunts = {},
                    std::map<std::string, bool> switches = {})
        : names_(std::move(bus_names)),
          lines_(std::move(lines)),
          shunts_(std::move(shunts)),
          switches_(std::move(switches)) {
        const int n = static_cast<int>(names_.size());
        if (shunts_.empty()) shunts_.assign(n, Complex{});
        if (static_cast<int>(shunts_.size()) != n)
            throw ModelError("shunt list size does not match bus count");
        for (const auto& l : lines_) {
            if (l.from < 0 || l.from >= n || l.to < 0 || l.to >= n || l.from == l.to)
                throw ModelError("line '" + l.name + "' has invalid endpoints");
            if (l.model == LineModel::series_impedance && std::abs(l.value) == 0.0)
                throw ModelError("line '" + l.name + "' has zero impedance");
            if (!l.switch_name.empty() && !switches_.count(l.switch_name))
                switches_[l.switch_name] = true;
        }
        rebuild();
    }

    int size() const { return static_cast<int>(names_.size()); }
    const std::vector<std::string>& bus_names() const { return names_; }
    const std::vector<Line>& lines() const { return lines_; }
    const std::vector<Complex>& shunts() const { return shunts_; }
    const std::map<std::string, bool>& switches() const { return switches_; }

    /// Sorted neighbour set N_i; always contains i.
    const std::vector<int>& neighbors(int i) const { return neighbors_.at(i); }
    bool adjacent(int j, int k) const { return adjacency_(j, k) != 0; }
    Complex Y(int j, int k) const { return Y_(j, k); }
    const CMat& admittance() const { return Y_; }

    bool line_active(const Line& l) const {
        return l.switch_name.empty() || switches_.at(l.switch_name);
    }

    bool switch_closed(const std::string& name) const {
        auto it = switches_.find(name);
        if (it == switches_.end()) throw ModelError("unknown switch '" + name + "'");
        return it->second;
    }

    /// Copy with one breaker set to the given state.
    AdmittanceGraph with_switch(const std::string& name, bool closed) const {
        if (!switches_.count(name)) throw ModelError("unknown switch '" + name + "'");
        AdmittanceGraph g = *this;
        g.switches_[name] = closed;
        g.rebuild();
        return g;
    }

    /// "nominal" when every switch is closed, otherwise the open switches
    /// joined by '+', e.g. "SW2-open".
    std::string topology_id() const {
        std::string id;
        for (const auto& [name, closed] : switches_) {
            if (closed) continue;
            if (!id.empty()) id += '+';
            id += name;
        }
        return id.empty() ? "nominal" : id + "-open";
    }

    /// Buses reachable from `root` through active lines.
    std::vector<bool> reachable_from(int root) const {
        std::vector<bool> seen(size(), false);
        std::vector<int> stack{root};
        seen[root] = true;
        while (!stack.empty()) {
            int i = stack.back();
            stack.pop_back();
            for (int k : neighbors_[i])
                if (!seen[k]) {
                    seen[k] = true;
                    stack.push_back(k);
                }
        }
        return seen;
    }

    friend bool operator==(const AdmittanceGraph& a, const AdmittanceGraph& b) {
        return a.names_ == b.names_ && a.switches_ == b.switches_ &&
               a.neighbors_ == b.neighbors_ && a.Y_ == b.Y_;
    }

private:
    void rebuild() {
        const int n = size();
        Y_ = CMat::Zero(n, n);
        adjacency_ = Eigen::MatrixXi::Zero(n, n);
        for (int i = 0; i < n; ++i) {
            Y_(i, i) += shunts_[i];
            adjacency_(i, i) = 1;
        }
        for (const auto& l : lines_) {
            if (!line_active(l)) continue;
            adjacency_(l.from, l.to) = adjacency_(l.to, l.from) = 1;
            if (l.model == LineModel::admittance_entry) {
                Y_(l.from, l.to) += l.value;
                Y_(l.to, l.from) += l.value;
            } else {
                const Complex y = 1.0 / l.value;
                Y_(l.from, l.to) -= y;
                Y_(l.to, l.from) -= y;
                Y_(l.from, l.from) += y;
                Y_(l.to, l.to) += y;
            }
        }
        neighbors_.assign(n, {});
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k)
                if (adjacency_(j, k)) neighbors_[j].push_back(k);
    }

    std::vector<std::string> names_;
    std::vector<Line> lines_;
    std::vector<Complex> shunts_;
    std::map<std::string, bool> switches_;
    CMat Y_;
    Eigen::MatrixXi adjacency_;
    std::vector<std::vector<int>> neighbors_;
};

struct BusState {
    double V = 1.0;      ///< p.u., must be > 0
    double delta = 0.0;  ///< rad
    double omega = 0.0;  ///< rad/s
};

/// Per-microgrid references. Angles are radians; the CSV layer converts.
struct OperatingPoint {
    std::string condition;
    std::vector<std::string> names;
    Vec P_inj, Q_inj, P_load, Q_load, V, delta;
    double omega_ref = 2.0 * kPi * 60.0;

    int size() const { return static_cast<int>(V.size()); }
};

struct Injections {
    Vec P;
    Vec Q;
};

inline void check_dims(const AdmittanceGraph& g, const Vec& V, const Vec& delta) {
    if (V.size() != g.size() || delta.size() != g.size())
        throw ModelError("state vectors do not match the number of microgrids (" +
                         std::to_string(g.size()) + ")");
}

/// Real and reactive injections
///   P_j = sum_{k in N_j} V_j V_k |Y_jk| sin(delta_jk + pi/2 - angle(Y_jk))
///   Q_j = sum_{k in N_j} V_j V_k |Y_jk| sin(delta_jk - angle(Y_jk)).
inline Injections power_injections(const AdmittanceGraph& g, const Vec& V, const Vec& delta) {
    check_dims(g, V, delta);
    const int n = g.size();
    Injections out{Vec::Zero(n), Vec::Zero(n)};
    for (int j = 0; j < n; ++j) {
        for (int k : g.neighbors(j)) {
            const Complex y = g.Y(j, k);
            const double mag = std::abs(y);
            if (mag == 0.0) continue;
            const double ang = std::arg(y);
            const double djk = delta(j) - delta(k);
            const double vv = V(j) * V(k) * mag;
            out.P(j) += vv * std::sin(djk + kPi / 2 - ang);
            out.Q(j) += vv * std::sin(djk - ang);
        }
    }
    return out;
}

/// Partial derivatives of the injections w.r.t. bus angles and magnitudes.
struct InjectionSensitivity {
    Mat dP_ddelta, dP_dV, dQ_ddelta, dQ_dV;  // each N x N
};

inline InjectionSensitivity injection_sensitivity(const AdmittanceGraph& g, const Vec& V,
                                                  const Vec& delta) {
    check_dims(g, V, delta);
    const int n = g.size();
    InjectionSensitivity s{Mat::Zero(n, n), Mat::Zero(n, n), Mat::Zero(n, n), Mat::Zero(n, n)};
    for (int j = 0; j < n; ++j) {
        for (int k : g.neighbors(j)) {
            const Complex y = g.Y(j, k);
            const double mag = std::abs(y);
            if (mag == 0.0) continue;
            const double ang = std::arg(y);
            const double djk = delta(j) - delta(k);
            const double sp = std::sin(djk + kPi / 2 - ang), cp = std::cos(djk + kPi / 2 - ang);
            const double sq = std::sin(djk - ang), cq = std::cos(djk - ang);
            if (k == j) {
                // delta_jj = 0: only the magnitude enters, quadratically.
                s.dP_dV(j, j) += 2.0 * V(j) * mag * sp;
                s.dQ_dV(j, j) += 2.0 * V(j) * mag * sq;
                continue;
            }
            const double vv = V(j) * V(k) * mag;
            s.dP_ddelta(j, j) += vv * cp;
            s.dP_ddelta(j, k) -= vv * cp;
            s.dQ_ddelta(j, j) += vv * cq;
            s.dQ_ddelta(j, k) -= vv * cq;
            s.dP_dV(j, j) += V(k) * mag * sp;
            s.dP_dV(j, k) += V(j) * mag * sp;
            s.dQ_dV(j, j) += V(k) * mag * sq;
            s.dQ_dV(j, k) += V(j) * mag * sq;
        }
    }
    return s;
}

/// 2N x 3N Jacobian with rows (P_i, Q_i) and columns (delta_k, omega_k, V_k).
/// The omega columns are identically zero.
inline Mat jacobian_H(const InjectionSensitivity& s) {
    const auto n = s.dP_dV.rows();
    Mat H = Mat::Zero(2 * n, 3 * n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < n; ++k) {
            H(2 * i, 3 * k) = s.dP_ddelta(i, k);
            H(2 * i, 3 * k + 2) = s.dP_dV(i, k);
            H(2 * i + 1, 3 * k) = s.dQ_ddelta(i, k);
            H(2 * i + 1, 3 * k + 2) = s.dQ_dV(i, k);
        }
    return H;
}

inline Mat jacobian_H(const AdmittanceGraph& g, const OperatingPoint& op) {
    if (op.size() != g.size()) throw ModelError("operating point does not match graph size");
    return jacobian_H(injection_sensitivity(g, op.V, op.delta));
}

/// Injection targets for a power-flow solve. Slack entries of P/Q are ignored.
struct PowerFlowTargets {
    Vec P, Q, P_load, Q_load;
    int slack = 0;
    double slack_V = 1.0;
    double slack_delta = 0.0;
    std::string condition;
};

struct NewtonOptions {
    int max_iterations = 50;
    double tolerance = 1e-8;
    double damping = 1.0;
};

/// Newton-Raphson on the injection mismatch, flat start from the slack values.
inline OperatingPoint solve_operating_point(const AdmittanceGraph& g, const PowerFlowTargets& t,
                                            const NewtonOptions& opt = {}) {
    const int n = g.size();
    if (t.P.size() != n || t.Q.size() != n)
        throw ModelError("power-flow targets do not match graph size");
    if (t.slack < 0 || t.slack >= n) throw ModelError("slack index out of range");
    if (!(t.slack_V > 0.0)) throw ModelError("slack voltage must be positive");

    const auto reach = g.reachable_from(t.slack);
    for (int i = 0; i < n; ++i)
        if (!reach[i])
            throw SingularJacobianError(
                "microgrid '" + g.bus_names()[i] + "' is islanded from the slack bus", INFINITY);

    std::vector<int> unknown;  // non-slack buses
    for (int i = 0; i < n; ++i)
        if (i != t.slack) unknown.push_back(i);
    const int m = static_cast<int>(unknown.size());

    Vec V = Vec::Constant(n, t.slack_V);
    Vec d = Vec::Constant(n, t.slack_delta);

    auto mismatch = [&](const Injections& inj) {
        Vec r(2 * m);
        for (int a = 0; a < m; ++a) {
            r(a) = t.P(unknown[a]) - inj.P(unknown[a]);
            r(m + a) = t.Q(unknown[a]) - inj.Q(unknown[a]);
        }
        return r;
    };

    double residual = INFINITY;
    for (int it = 0; it <= opt.max_iterations; ++it) {
        const Vec r = mismatch(power_injections(g, V, d));
        residual = m ? r.cwiseAbs().maxCoeff() : 0.0;
        if (residual <= opt.tolerance) {
            const auto inj = power_injections(g, V, d);
            OperatingPoint op;
            op.condition = t.condition;
            op.names = g.bus_names();
            op.V = V;
            op.delta = d;
            op.P_inj = inj.P;
            op.Q_inj = inj.Q;
            op.P_load = t.P_load.size() == n ? t.P_load : Vec::Zero(n);
            op.Q_load = t.Q_load.size() == n ? t.Q_load : Vec::Zero(n);
            return op;
        }
        if (it == opt.max_iterations) break;

        const auto s = injection_sensitivity(g, V, d);
        Mat J(2 * m, 2 * m);
        for (int a = 0; a < m; ++a)
            for (int b = 0; b < m; ++b) {
                const int i = unknown[a], k = unknown[b];
                J(a, b) = s.dP_ddelta(i, k);
                J(a, m + b) = s.dP_dV(i, k);
                J(m + a, b) = s.dQ_ddelta(i, k);
                J(m + a, m + b) = s.dQ_dV(i, k);
            }
        Eigen::FullPivLU<Mat> lu(J);
        if (!lu.isInvertible())
            throw SingularJacobianError("singular power-flow Jacobian at iteration " +
                                            std::to_string(it),
                                        residual);
        const Vec step = lu.solve(r);
        for (int a = 0; a < m; ++a) {
            d(unknown[a]) += opt.damping * step(a);
            V(unknown[a]) += opt.damping * step(m + a);
        }
        if (!V.allFinite() || (V.array() <= 0.0).any())
            throw ConvergenceError("power flow diverged (non-positive voltage)", residual);
    }
    throw ConvergenceError("power flow did not converge in " +
                               std::to_string(opt.max_iterations) +
                               " iterations; final residual " + std::to_string(residual),
                           residual);
}

/// Targets that reproduce `op` on a (possibly modified) graph: same
/// non-slack injections, same slack voltage and angle.
inline PowerFlowTargets targets_from(const OperatingPoint& op, int slack) {
    PowerFlowTargets t;
    t.P = op.P_inj;
    t.Q = op.Q_inj;
    t.P_load = op.P_load;
    t.Q_load = op.Q_load;
    t.slack = slack;
    t.slack_V = op.V(slack);
    t.slack_delta = op.delta(slack);
    t.condition = op.condition;
    return t;
}

/// Copy of `g` whose bus shunts are chosen so that `op` (V, delta, P_inj,
/// Q_inj) is an exact power-flow solution. Existing shunts are replaced.
inline AdmittanceGraph with_calibrated_shunts(const AdmittanceGraph& g, const OperatingPoint& op) {
    const int n = g.size();
    check_dims(g, op.V, op.delta);
    if (op.P_inj.size() != n || op.Q_inj.size() != n)
        throw ModelError("operating point injections do not match graph size");
    const AdmittanceGraph bare(g.bus_names(), g.lines(), {}, g.switches());
    const auto inj = power_injections(bare, op.V, op.delta);
    std::vector<Complex> sh(n);
    // Self term: P = V^2 Re(Y_jj), Q = -V^2 Im(Y_jj).
    for (int i = 0; i < n; ++i)
        sh[i] = Complex(op.P_inj(i) - inj.P(i), -(op.Q_inj(i) - inj.Q(i))) / (op.V(i) * op.V(i));
    return AdmittanceGraph(g.bus_names(), g.lines(), sh, g.switches());
}

/// Largest absolute power-flow mismatch of `op` on `g`.
inline double operating_point_residual(const AdmittanceGraph& g, const OperatingPoint& op) {
    const auto inj = power_injections(g, op.V, op.delta);
    return std::max((inj.P - op.P_inj).cwiseAbs().maxCoeff(),
                    (inj.Q - op.Q_inj).cwiseAbs().maxCoeff());
}

}  // namespace mafd
