#pragma once

// Per-microgrid mixed angle/frequency droop dynamics, the coupling u = h(x)
// and the stacked switched vector field.
//
// State layout: x = [d_delta_0, d_omega_0, d_V_0, d_delta_1, ...] (3N),
// inputs u and disturbances w are [P_0, Q_0, P_1, Q_1, ...] (2N).

#include "mafd/netmodel.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mafd {

struct MicrogridDroop {
    double J_delta = 1.0, D_delta = 1.0;
    double J_omega = 1.0, D_omega = 1.0;
    double J_V = 1.0, D_V = 1.0;
    /// Extra -k * d_delta term in the frequency-droop angle equation. Zero
    /// keeps d_delta-dot = d_omega.
    double angle_leakage = 0.0;
};

/// How the bracket of the angle-mode frequency propagation is evaluated.
enum class OmegaPropagation {
    literal,     ///< bracket = d_delta-dot from the angle droop law
    propagated,  ///< bracket = d_omega (equal to the above along consistent trajectories)
};

struct DroopParams {
    std::vector<MicrogridDroop> mg;
    OmegaPropagation omega_propagation = OmegaPropagation::literal;

    int size() const { return static_cast<int>(mg.size()); }

    void validate(int n) const {
        if (size() != n)
            throw ModelError("droop parameters given for " + std::to_string(size()) +
                             " microgrids, network has " + std::to_string(n));
        for (int i = 0; i < n; ++i) {
            const auto& p = mg[i];
            if (!(p.J_delta > 0 && p.D_delta > 0 && p.J_omega > 0 && p.D_omega > 0 &&
                  p.J_V > 0 && p.D_V > 0))
                throw ModelError("droop coefficients of microgrid " + std::to_string(i) +
                                 " must be positive");
            if (p.angle_leakage < 0)
                throw ModelError("angle_leakage must be non-negative");
        }
    }
};

enum class Mode : int { angle = 1, frequency = 2 };

/// sigma = (sigma_1, ..., sigma_N), stored as a bit mask (bit i set means
/// microgrid i runs frequency droop). The mask doubles as the mode index.
class SwitchingVector {
public:
    SwitchingVector() = default;
    SwitchingVector(int n, std::uint32_t bits) : n_(n), bits_(bits) {
        if (n < 0 || n > 31) throw ModelError("switching vector size out of range");
        if (n < 32 && (bits >> n) != 0) throw ModelError("switching bits exceed size");
    }

    static SwitchingVector all(int n, Mode m) {
        return {n, m == Mode::angle ? 0u : static_cast<std::uint32_t>((1ull << n) - 1)};
    }

    /// Parses "12211" (one digit per microgrid).
    static SwitchingVector parse(const std::string& s) {
        std::uint32_t bits = 0;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '2')
                bits |= 1u << i;
            else if (s[i] != '1')
                throw ParseError("invalid switching vector '" + s + "'");
        }
        return {static_cast<int>(s.size()), bits};
    }

    int size() const { return n_; }
    std::uint32_t index() const { return bits_; }
    Mode operator[](int i) const { return (bits_ >> i) & 1u ? Mode::frequency : Mode::angle; }

    SwitchingVector with(int i, Mode m) const {
        std::uint32_t b = m == Mode::frequency ? (bits_ | (1u << i)) : (bits_ & ~(1u << i));
        return {n_, b};
    }

    std::string str() const {
        std::string s(n_, '1');
        for (int i = 0; i < n_; ++i)
            if ((*this)[i] == Mode::frequency) s[i] = '2';
        return s;
    }

    friend bool operator==(const SwitchingVector&, const SwitchingVector&) = default;

private:
    int n_ = 0;
    std::uint32_t bits_ = 0;
};

/// Angle measurements held at stale values (lost D-PMU with a controller that
/// keeps using the last sample). Empty entries use the live state.
using AngleHold = std::vector<std::optional<double>>;

/// Network + operating point + droop coefficients. Immutable once built.
class Plant {
public:
    Plant(AdmittanceGraph graph, OperatingPoint op, DroopParams params)
        : graph_(std::move(graph)), op_(std::move(op)), params_(std::move(params)) {
        if (op_.size() != graph_.size())
            throw ModelError("operating point size does not match network");
        params_.validate(graph_.size());
        if ((op_.V.array() <= 0.0).any()) throw ModelError("reference voltages must be positive");
    }

    int size() const { return graph_.size(); }
    const AdmittanceGraph& graph() const { return graph_; }
    const OperatingPoint& op() const { return op_; }
    const DroopParams& params() const { return params_; }

    Vec absolute_V(const Vec& x) const { return op_.V + x(Eigen::seqN(2, size(), 3)); }
    Vec absolute_delta(const Vec& x) const { return op_.delta + x(Eigen::seqN(0, size(), 3)); }

private:
    AdmittanceGraph graph_;
    OperatingPoint op_;
    DroopParams params_;
};

inline void check_state(const Plant& p, const Vec& x) {
    if (x.size() != 3 * p.size())
        throw ModelError("state has dimension " + std::to_string(x.size()) + ", expected " +
                         std::to_string(3 * p.size()));
}

/// u = h(x): injection deviations from the reference injections.
inline Vec coupling_h(const Plant& p, const Vec& x) {
    check_state(p, x);
    const auto inj = power_injections(p.graph(), p.absolute_V(x), p.absolute_delta(x));
    Vec u(2 * p.size());
    for (int i = 0; i < p.size(); ++i) {
        u(2 * i) = inj.P(i) - p.op().P_inj(i);
        u(2 * i + 1) = inj.Q(i) - p.op().Q_inj(i);
    }
    return u;
}

namespace detail {

inline double angle_measurement(const Vec& x, int i, const AngleHold* hold) {
    if (hold && static_cast<int>(hold->size()) > i && (*hold)[i]) return *(*hold)[i];
    return x(3 * i);
}

inline double angle_droop_rate(const MicrogridDroop& c, double delta_meas, double p_ext,
                               double p_inj) {
    return (-c.D_delta * delta_meas + p_ext - p_inj) / c.J_delta;
}

inline double voltage_droop_rate(const MicrogridDroop& c, double dv, double q_ext, double q_inj) {
    return (-c.D_V * dv + q_ext - q_inj) / c.J_V;
}

}  // namespace detail

/// Angle-droop mode. `pinj_rate` is d(Delta P_inj^i)/dt from the chain rule
/// through the power-flow equations; `held_angle` replaces the angle seen by
/// the droop law when the measurement is stale.
inline Eigen::Vector3d mode1_derivative(int i, const DroopParams& params, const Vec& x,
                                        const Vec& u, const Vec& w, double pinj_rate,
                                        std::optional<double> held_angle = {}) {
    const auto& c = params.mg.at(i);
    const double delta_meas = held_angle ? *held_angle : x(3 * i);
    const double ddelta = detail::angle_droop_rate(c, delta_meas, w(2 * i), u(2 * i));
    const double dv = detail::voltage_droop_rate(c, x(3 * i + 2), w(2 * i + 1), u(2 * i + 1));
    const double bracket =
        params.omega_propagation == OmegaPropagation::literal ? ddelta : x(3 * i + 1);
    const double domega = -(c.D_delta / c.J_delta) * bracket - pinj_rate / c.J_delta;
    return {ddelta, domega, dv};
}

/// Frequency-droop mode.
inline Eigen::Vector3d mode2_derivative(int i, const DroopParams& params, const Vec& x,
                                        const Vec& u, const Vec& w) {
    const auto& c = params.mg.at(i);
    const double ddelta = x(3 * i + 1) - c.angle_leakage * x(3 * i);
    const double domega = (-c.D_omega * x(3 * i + 1) + w(2 * i) - u(2 * i)) / c.J_omega;
    const double dv = detail::voltage_droop_rate(c, x(3 * i + 2), w(2 * i + 1), u(2 * i + 1));
    return {ddelta, domega, dv};
}

/// Primary-loop rates (delta-dot, V-dot) of every microgrid with u = h(x).
struct PrimaryRates {
    Vec ddelta;
    Vec dV;
};

inline PrimaryRates primary_rates(const Plant& p, const SwitchingVector& sigma, const Vec& x,
                                  const Vec& h, const Vec& w, const AngleHold* hold = nullptr) {
    const int n = p.size();
    PrimaryRates r{Vec(n), Vec(n)};
    for (int k = 0; k < n; ++k) {
        const auto& c = p.params().mg[k];
        r.dV(k) = detail::voltage_droop_rate(c, x(3 * k + 2), w(2 * k + 1), h(2 * k + 1));
        if (sigma[k] == Mode::angle)
            r.ddelta(k) = detail::angle_droop_rate(c, detail::angle_measurement(x, k, hold),
                                                   w(2 * k), h(2 * k));
        else
            r.ddelta(k) = x(3 * k + 1) - c.angle_leakage * x(3 * k);
    }
    return r;
}

/// Stacked vector field f_sigma(x, u, w). Angle and voltage rates come first;
/// the angle-mode omega rows then use the chain rule
///   dP_inj^i/dt = sum_k dP_i/d delta_k * delta_k-dot + dP_i/dV_k * V_k-dot
/// evaluated with the primary-loop rates of the neighbours.
inline Vec assemble_f(const Plant& p, const SwitchingVector& sigma, const Vec& x, const Vec& u,
                      const Vec& w, const AngleHold* hold = nullptr) {
    check_state(p, x);
    const int n = p.size();
    if (u.size() != 2 * n || w.size() != 2 * n) throw ModelError("input dimension mismatch");
    if (sigma.size() != n) throw ModelError("switching vector size mismatch");

    bool any_angle = false;
    for (int i = 0; i < n; ++i) any_angle |= sigma[i] == Mode::angle;

    Vec pinj_rate = Vec::Zero(n);
    if (any_angle) {
        const Vec V = p.absolute_V(x), d = p.absolute_delta(x);
        const Vec h = coupling_h(p, x);
        const auto rates = primary_rates(p, sigma, x, h, w, hold);
        const auto s = injection_sensitivity(p.graph(), V, d);
        pinj_rate = s.dP_ddelta * rates.ddelta + s.dP_dV * rates.dV;
    }

    Vec xdot(3 * n);
    for (int i = 0; i < n; ++i) {
        Eigen::Vector3d r;
        if (sigma[i] == Mode::angle) {
            std::optional<double> held;
            if (hold && static_cast<int>(hold->size()) > i) held = (*hold)[i];
            r = mode1_derivative(i, p.params(), x, u, w, pinj_rate(i), held);
        } else {
            r = mode2_derivative(i, p.params(), x, u, w);
        }
        xdot.segment<3>(3 * i) = r;
    }
    return xdot;
}

/// y = g_sigma(x, w): (delta-dot or omega-dot, Delta V) per microgrid with
/// u = h(x) substituted. Secondary injections are not part of y.
inline Vec output_g(const Plant& p, const SwitchingVector& sigma, const Vec& x, const Vec& w,
                    const AngleHold* hold = nullptr) {
    const Vec xdot = assemble_f(p, sigma, x, coupling_h(p, x), w, hold);
    const int n = p.size();
    Vec y(2 * n);
    for (int i = 0; i < n; ++i) {
        y(2 * i) = sigma[i] == Mode::angle ? xdot(3 * i) : xdot(3 * i + 1);
        y(2 * i + 1) = x(3 * i + 2);
    }
    return y;
}

}  // namespace mafd
