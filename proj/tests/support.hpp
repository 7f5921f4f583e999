#pragma once

#include "mafd/mafd.hpp"

#include <complex>
#include <filesystem>
#include <random>

#ifndef MAFD_CONFIG_DIR
#define MAFD_CONFIG_DIR "configs"
#endif

namespace mafd::test {

inline std::filesystem::path config(const std::string& name) {
    return std::filesystem::path(MAFD_CONFIG_DIR) / name;
}

/// S_j = V_j conj(sum_k Y_jk V_k) in long double complex arithmetic, a
/// different route to the injections than the sin/angle form.
inline Injections oracle_injections(const AdmittanceGraph& g, const Vec& V, const Vec& delta) {
    using C = std::complex<long double>;
    const int n = g.size();
    std::vector<C> E(n);
    for (int k = 0; k < n; ++k) E[k] = std::polar<long double>(V(k), delta(k));
    Injections out{Vec::Zero(n), Vec::Zero(n)};
    for (int j = 0; j < n; ++j) {
        C I = 0;
        for (int k = 0; k < n; ++k) {
            const Complex y = g.Y(j, k);
            I += C(y.real(), y.imag()) * E[k];
        }
        const C S = E[j] * std::conj(I);
        out.P(j) = static_cast<double>(S.real());
        out.Q(j) = static_cast<double>(S.imag());
    }
    return out;
}

/// Vector field assembled from the oracle injections, with the injection
/// rate taken as a directional difference along the primary-loop rates.
inline Vec oracle_field(const Plant& p, const SwitchingVector& s, const Vec& x, const Vec& w) {
    const int n = p.size();
    auto inj = [&](const Vec& xx) {
        return oracle_injections(p.graph(), p.absolute_V(xx), p.absolute_delta(xx));
    };
    const auto I = inj(x);
    Vec dd(n), dv(n);
    for (int i = 0; i < n; ++i) {
        const auto& c = p.params().mg[i];
        const double dP = I.P(i) - p.op().P_inj(i), dQ = I.Q(i) - p.op().Q_inj(i);
        dv(i) = (-c.D_V * x(3 * i + 2) + w(2 * i + 1) - dQ) / c.J_V;
        dd(i) = s[i] == Mode::angle ? (-c.D_delta * x(3 * i) + w(2 * i) - dP) / c.J_delta
                                    : x(3 * i + 1) - c.angle_leakage * x(3 * i);
    }
    Vec dir = Vec::Zero(3 * n);
    for (int i = 0; i < n; ++i) dir(3 * i) = dd(i), dir(3 * i + 2) = dv(i);
    const double h = 1e-6;
    const Vec Pdot = (inj(x + h * dir).P - inj(x - h * dir).P) / (2 * h);
    Vec f(3 * n);
    for (int i = 0; i < n; ++i) {
        const auto& c = p.params().mg[i];
        const double dP = I.P(i) - p.op().P_inj(i);
        f(3 * i) = dd(i);
        f(3 * i + 2) = dv(i);
        if (s[i] == Mode::angle) {
            const double bracket =
                p.params().omega_propagation == OmegaPropagation::literal ? dd(i) : x(3 * i + 1);
            f(3 * i + 1) = -(c.D_delta / c.J_delta) * bracket - Pdot(i) / c.J_delta;
        } else {
            f(3 * i + 1) = (-c.D_omega * x(3 * i + 1) + w(2 * i) - dP) / c.J_omega;
        }
    }
    return f;
}

struct RandomNetwork {
    AdmittanceGraph graph;
    OperatingPoint op;
};

/// Connected random network (spanning tree plus extra lines) with a solved
/// operating point for random small injections.
inline RandomNetwork random_network(int n, std::mt19937_64& rng, bool shunts = true) {
    std::uniform_real_distribution<double> r(0.01, 0.08), x(0.15, 0.6), inj(-0.15, 0.15),
        sh(0.0, 0.05), coin(0.0, 1.0);
    std::vector<std::string> names;
    for (int i = 0; i < n; ++i) names.push_back("b" + std::to_string(i));
    std::vector<Line> lines;
    auto add = [&](int a, int b) {
        lines.push_back({"L" + std::to_string(a) + std::to_string(b), a, b, {r(rng), x(rng)},
                         LineModel::series_impedance, ""});
    };
    for (int i = 1; i < n; ++i) add(std::uniform_int_distribution<int>(0, i - 1)(rng), i);
    for (int a = 0; a < n; ++a)
        for (int b = a + 2; b < n; ++b)
            if (coin(rng) < 0.3) add(a, b);
    std::vector<Complex> s(n);
    if (shunts)
        for (auto& v : s) v = Complex(0.0, sh(rng));
    RandomNetwork rn{AdmittanceGraph(names, lines, s), {}};
    PowerFlowTargets t;
    t.P = Vec(n);
    t.Q = Vec(n);
    for (int i = 0; i < n; ++i) t.P(i) = inj(rng), t.Q(i) = 0.5 * inj(rng);
    t.P_load = t.Q_load = Vec::Zero(n);
    t.slack_V = 1.0 + 0.05 * inj(rng);
    rn.op = solve_operating_point(rn.graph, t);
    rn.op.names = names;
    return rn;
}

inline DroopParams random_droop(int n, std::mt19937_64& rng, OmegaPropagation prop) {
    std::uniform_real_distribution<double> c(0.5, 3.0), k(0.0, 2.0);
    DroopParams p;
    p.omega_propagation = prop;
    for (int i = 0; i < n; ++i)
        p.mg.push_back({c(rng), c(rng), c(rng), c(rng), c(rng), c(rng), k(rng)});
    return p;
}

/// Strong-droop parameters in the regime where distributed synthesis is feasible.
inline DroopParams strong_droop(int n, double D = 10.0, double kappa = 2.0) {
    DroopParams p;
    p.omega_propagation = OmegaPropagation::propagated;
    p.mg.assign(n, MicrogridDroop{1.0, D, 1.0, D, 1.0, D, kappa});
    return p;
}

inline System ring3() { return load_system(config("ring3.json"), config("droop_ring3.json")); }
inline System five() { return load_system(config("five_microgrid.json"), config("droop_five.json")); }

/// Independent positive-definiteness test: Cholesky of M - eps I.
inline bool cholesky_pd(const Mat& M, double eps) {
    Eigen::LLT<Mat> llt(symmetrize(M) - eps * Mat::Identity(M.rows(), M.cols()));
    return llt.info() == Eigen::Success;
}

inline double state_norm_at_end(const Trajectory& tr) { return tr.x.empty() ? 0.0 : tr.x.back().norm(); }

}  // namespace mafd::test
