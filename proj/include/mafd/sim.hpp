#pragma once

// Closed-loop simulation under measurement-loss switching, disturbances and
// topology events. u -> h(x) + K_sigma y, y from the primary loop.

#include "mafd/synth.hpp"

#include <boost/numeric/odeint.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace mafd {

enum class Channel { P = 0, Q = 1 };

/// Rectangular pulse on one disturbance channel, active on [start, end).
struct Pulse {
    int microgrid = 0;
    Channel channel = Channel::P;
    double start = 0.0, end = 0.0, amplitude = 0.0;
};

/// amplitude * sin(frequency * t + phase) on [start, end).
struct Sinusoid {
    int microgrid = 0;
    Channel channel = Channel::P;
    double amplitude = 0.0, frequency = 1.0, phase = 0.0;
    double start = 0.0, end = INFINITY;
};

struct DisturbanceProfile {
    std::vector<Pulse> pulses;
    std::vector<Sinusoid> sines;

    bool empty() const { return pulses.empty() && sines.empty(); }

    Vec at(double t, int n) const {
        Vec w = Vec::Zero(2 * n);
        for (const auto& p : pulses)
            if (t >= p.start && t < p.end) w(2 * p.microgrid + static_cast<int>(p.channel)) += p.amplitude;
        for (const auto& s : sines)
            if (t >= s.start && t < s.end)
                w(2 * s.microgrid + static_cast<int>(s.channel)) +=
                    s.amplitude * std::sin(s.frequency * t + s.phase);
        return w;
    }

    std::vector<double> breakpoints() const {
        std::vector<double> b;
        for (const auto& p : pulses) b.insert(b.end(), {p.start, p.end});
        for (const auto& s : sines) b.insert(b.end(), {s.start, s.end});
        return b;
    }
};

struct LossInterval {
    double start = 0.0, end = 0.0;  ///< [start, end)
};

enum class ControllerKind { none, C1, C2, C3 };

inline const char* to_string(ControllerKind c) {
    switch (c) {
        case ControllerKind::none: return "none";
        case ControllerKind::C1: return "C1";
        case ControllerKind::C2: return "C2";
        case ControllerKind::C3: return "C3";
    }
    return "?";
}

/// Which channels of a lost microgrid the stale-measurement baseline freezes.
enum class FreezeChannels { both, angle };

struct TopologyEvent {
    double time = 0.0;
    std::string switch_name;
    bool close = true;
};

struct IntegratorOptions {
    double abs_tol = 1e-10;
    double rel_tol = 1e-8;
    double output_interval = 1e-3;
    double initial_step = 1e-4;
    double max_step = 0.0;  ///< 0: unbounded
};

struct ScenarioSpec {
    std::string name = "scenario";
    double horizon = 10.0;
    std::vector<std::vector<LossInterval>> loss;  ///< per microgrid (may be empty)
    DisturbanceProfile disturbance;
    std::string initial_topology = "nominal";
    std::vector<TopologyEvent> events;
    ControllerKind controller = ControllerKind::C1;
    FreezeChannels freeze = FreezeChannels::both;
    bool linear = false;  ///< integrate the linearized closed loop instead
    Vec x0;               ///< empty: zero
    IntegratorOptions integrator;

    void validate(int n) const {
        if (!(horizon > 0)) throw ModelError("scenario horizon must be positive");
        if (!(integrator.output_interval > 0)) throw ModelError("output interval must be positive");
        if (static_cast<int>(loss.size()) > n) throw ModelError("loss intervals for unknown microgrid");
        for (const auto& iv : loss) {
            std::vector<LossInterval> s = iv;
            std::sort(s.begin(), s.end(), [](auto& a, auto& b) { return a.start < b.start; });
            for (std::size_t k = 0; k < s.size(); ++k) {
                if (!(s[k].end > s[k].start) || s[k].start < 0 || s[k].end > horizon + 1e-12)
                    throw ModelError("loss interval outside the horizon or empty");
                if (k && s[k].start < s[k - 1].end) throw ModelError("overlapping loss intervals");
            }
        }
        for (std::size_t k = 1; k < events.size(); ++k)
            if (events[k].time < events[k - 1].time) throw ModelError("topology events out of order");
        for (const auto& p : disturbance.pulses)
            if (p.microgrid < 0 || p.microgrid >= n) throw ModelError("disturbance on unknown microgrid");
        for (const auto& s : disturbance.sines)
            if (s.microgrid < 0 || s.microgrid >= n) throw ModelError("disturbance on unknown microgrid");
        if (x0.size() != 0 && x0.size() != 3 * n) throw ModelError("x0 has wrong dimension");
    }
};

/// sigma_i(t) = 2 iff t lies in a loss interval of microgrid i.
inline SwitchingVector switching_signal_at(const ScenarioSpec& spec, int n, double t) {
    std::uint32_t bits = 0;
    for (int i = 0; i < n && i < static_cast<int>(spec.loss.size()); ++i)
        for (const auto& iv : spec.loss[i])
            if (t >= iv.start && t < iv.end) bits |= 1u << i;
    return {n, bits};
}

struct Trajectory {
    int n = 0;
    std::vector<double> t;
    std::vector<Vec> x, xdot, y, u, ut, w;
    std::vector<std::uint32_t> sigma;
    std::vector<std::string> topology;

    std::size_t size() const { return t.size(); }
};

/// Plants (and, for linear runs, switched models) keyed by topology id.
struct SimContext {
    std::map<std::string, std::shared_ptr<const Plant>> plants;
    std::map<std::string, std::shared_ptr<const SwitchedModel>> models;

    const Plant& plant(const std::string& id) const {
        auto it = plants.find(id);
        if (it == plants.end()) throw RuntimeFailure("no model for topology '" + id + "'");
        return *it->second;
    }
    const SwitchedModel& model(const std::string& id) const {
        auto it = models.find(id);
        if (it == models.end()) throw RuntimeFailure("no linear model for topology '" + id + "'");
        return *it->second;
    }
};

/// Preserves absolute (V, delta, omega) across a change of reference point.
inline Vec apply_topology_event(const Vec& x, const Plant& from, const Plant& to) {
    if (from.size() != to.size()) throw ModelError("topology event changes the microgrid count");
    check_state(from, x);
    Vec out = x;
    for (int i = 0; i < from.size(); ++i) {
        out(3 * i) = x(3 * i) + (from.op().delta(i) - to.op().delta(i));
        out(3 * i + 2) = x(3 * i + 2) + (from.op().V(i) - to.op().V(i));
    }
    return out;
}

/// Plant for the same microgrids on another topology: power flow re-solved
/// with the nominal non-slack targets.
inline std::shared_ptr<const Plant> plant_for_topology(const Plant& nominal,
                                                       const AdmittanceGraph& g, int slack) {
    auto op = solve_operating_point(g, targets_from(nominal.op(), slack));
    op.condition = g.topology_id();
    return std::make_shared<const Plant>(g, op, nominal.params());
}

namespace detail {

struct SimState {
    std::shared_ptr<const Plant> plant;
    const SwitchedModel* model = nullptr;
    std::string topology;
    SwitchingVector sigma;      ///< from the loss pattern
    SwitchingVector dyn_sigma;  ///< mode actually integrated (all-angle for C3)
    const Mat* K = nullptr;
    AngleHold hold;
    std::vector<std::optional<Eigen::Vector2d>> held_y;
};

struct Evaluation {
    Vec xdot, y, u, ut;
};

inline Evaluation evaluate(const SimState& s, const ScenarioSpec& spec, const Vec& x, const Vec& w) {
    Evaluation e;
    const int n = s.plant->size();
    if (spec.linear) {
        const auto& m = s.model->mode(s.dyn_sigma);
        e.u = s.model->H * x;
        e.y = m.C * x + m.D * w;
        e.ut = s.K ? Vec(*s.K * e.y) : Vec::Zero(2 * n);
        e.xdot = m.A * x + m.B1 * (e.u + e.ut) + m.B2 * w;
        return e;
    }
    const AngleHold* hold = s.hold.empty() ? nullptr : &s.hold;
    e.u = coupling_h(*s.plant, x);
    const Vec xd0 = assemble_f(*s.plant, s.dyn_sigma, x, e.u, w, hold);
    e.y.resize(2 * n);
    for (int i = 0; i < n; ++i) {
        e.y(2 * i) = s.dyn_sigma[i] == Mode::angle ? xd0(3 * i) : xd0(3 * i + 1);
        e.y(2 * i + 1) = x(3 * i + 2);
        if (i < static_cast<int>(s.held_y.size()) && s.held_y[i]) {
            e.y(2 * i) = (*s.held_y[i])(0);
            if (spec.freeze == FreezeChannels::both) e.y(2 * i + 1) = (*s.held_y[i])(1);
        }
    }
    if (!s.K) {
        e.ut = Vec::Zero(2 * n);
        e.xdot = xd0;
        return e;
    }
    e.ut = *s.K * e.y;
    e.xdot = assemble_f(*s.plant, s.dyn_sigma, x, e.u + e.ut, w, hold);
    return e;
}

}  // namespace detail

/// Integrates one scenario. Breakpoints (loss boundaries, disturbance edges,
/// topology events) restart the integrator; the state is carried over.
inline Trajectory run_scenario(const ScenarioSpec& spec, const SimContext& ctx,
                               const ControllerSet* cs) {
    namespace odeint = boost::numeric::odeint;
    detail::SimState st;
    st.topology = spec.initial_topology;
    {
        auto it = ctx.plants.find(st.topology);
        if (it == ctx.plants.end())
            throw RuntimeFailure("no model for topology '" + st.topology + "'");
        st.plant = it->second;
    }
    const int n = st.plant->size();
    spec.validate(n);
    if (spec.controller != ControllerKind::none && !cs)
        throw RuntimeFailure(std::string("controller ") + to_string(spec.controller) +
                             " requested but no gains supplied");
    if (cs && spec.controller != ControllerKind::none && cs->n != n)
        throw ModelError("controller set size does not match the network");
    if (spec.linear && spec.controller == ControllerKind::C3)
        throw ModelError("the stale-measurement baseline has no linear form");
    if (spec.linear) st.model = &ctx.model(st.topology);

    const double dt = spec.integrator.output_interval;
    const auto nsamples = static_cast<long>(std::floor(spec.horizon / dt + 1e-9)) + 1;

    std::vector<double> breaks{0.0, spec.horizon};
    for (const auto& iv : spec.loss)
        for (const auto& l : iv) breaks.insert(breaks.end(), {l.start, l.end});
    for (double b : spec.disturbance.breakpoints()) breaks.push_back(b);
    for (const auto& e : spec.events) breaks.push_back(e.time);
    std::sort(breaks.begin(), breaks.end());
    breaks.erase(std::remove_if(breaks.begin(), breaks.end(),
                                [&](double b) { return !(b >= 0 && b <= spec.horizon); }),
                 breaks.end());
    breaks.erase(std::unique(breaks.begin(), breaks.end(),
                             [](double a, double b) { return std::abs(a - b) <= 1e-12; }),
                 breaks.end());

    Trajectory tr;
    tr.n = n;
    tr.t.reserve(nsamples);
    std::vector<double> x = spec.x0.size() ? std::vector<double>(spec.x0.data(), spec.x0.data() + 3 * n)
                                           : std::vector<double>(3 * n, 0.0);
    st.hold.clear();
    st.held_y.assign(n, std::nullopt);
    if (spec.controller == ControllerKind::C3) st.hold.assign(n, std::nullopt);

    auto configure = [&](double t, const Vec& xv) {
        st.sigma = switching_signal_at(spec, n, t);
        if (spec.controller == ControllerKind::C3) {
            st.dyn_sigma = SwitchingVector::all(n, Mode::angle);
            // Freeze newly lost microgrids at their last live values; release recovered ones.
            const Vec w = spec.disturbance.at(t, n);
            for (int i = 0; i < n; ++i) {
                const bool lost = st.sigma[i] == Mode::frequency;
                if (lost && !st.hold[i]) {
                    const auto pre = detail::evaluate(st, spec, xv, w);
                    st.held_y[i] = Eigen::Vector2d(pre.y(2 * i), pre.y(2 * i + 1));
                    st.hold[i] = xv(3 * i);
                } else if (!lost) {
                    st.hold[i].reset();
                    st.held_y[i].reset();
                }
            }
        } else {
            st.dyn_sigma = st.sigma;
        }
        st.K = nullptr;
        if (cs && spec.controller != ControllerKind::none) {
            const auto key = spec.controller == ControllerKind::C3 ? st.dyn_sigma : st.sigma;
            st.K = &cs->gain(key);
        }
    };

    auto record = [&](double t, const std::vector<double>& xs) {
        const Vec xv = Eigen::Map<const Vec>(xs.data(), 3 * n);
        if (!xv.allFinite())
            throw RuntimeFailure("state became non-finite at t = " + std::to_string(t));
        const Vec w = spec.disturbance.at(t, n);
        const auto e = detail::evaluate(st, spec, xv, w);
        tr.t.push_back(t);
        tr.x.push_back(xv);
        tr.xdot.push_back(e.xdot);
        tr.y.push_back(e.y);
        tr.u.push_back(e.u);
        tr.ut.push_back(e.ut);
        tr.w.push_back(w);
        tr.sigma.push_back(st.sigma.index());
        tr.topology.push_back(st.topology);
    };

    long next_sample = 0;
    auto sample_time = [&](long k) { return static_cast<double>(k) * dt; };
    const double eps_t = 1e-9 * std::max(1.0, spec.horizon);

    for (std::size_t seg = 0; seg + 1 < breaks.size() || seg == 0; ++seg) {
        const double ta = breaks[seg];
        const double tb = seg + 1 < breaks.size() ? breaks[seg + 1] : spec.horizon;

        // Events scheduled at ta take effect before the segment starts.
        for (const auto& ev : spec.events) {
            if (std::abs(ev.time - ta) > 1e-12) continue;
            const auto g2 = st.plant->graph().with_switch(ev.switch_name, ev.close);
            const std::string id = g2.topology_id();
            auto it = ctx.plants.find(id);
            if (it == ctx.plants.end())
                throw RuntimeFailure("no post-event model for topology '" + id + "'");
            Vec xv = Eigen::Map<const Vec>(x.data(), 3 * n);
            const Vec xn = apply_topology_event(xv, *st.plant, *it->second);
            for (int i = 0; i < n; ++i)
                if (!st.hold.empty() && st.hold[i])
                    *st.hold[i] += st.plant->op().delta(i) - it->second->op().delta(i);
            std::copy(xn.data(), xn.data() + 3 * n, x.begin());
            st.plant = it->second;
            st.topology = id;
            if (spec.linear) st.model = &ctx.model(id);
        }
        configure(ta, Eigen::Map<const Vec>(x.data(), 3 * n));

        std::vector<double> times{ta};
        std::vector<char> is_sample{0};
        const bool last = tb >= spec.horizon - eps_t;
        while (next_sample < nsamples) {
            const double ts = sample_time(next_sample);
            if (ts > tb + eps_t || (!last && ts >= tb - eps_t)) break;
            if (ts <= ta + eps_t) {
                if (times.size() == 1) is_sample[0] = 1;
            } else {
                times.push_back(ts);
                is_sample.push_back(1);
            }
            ++next_sample;
        }
        if (tb > times.back() + eps_t) {
            times.push_back(tb);
            is_sample.push_back(0);
        }

        auto rhs = [&](const std::vector<double>& xs, std::vector<double>& dxdt, double t) {
            const Vec xv = Eigen::Map<const Vec>(xs.data(), 3 * n);
            const auto e = detail::evaluate(st, spec, xv, spec.disturbance.at(t, n));
            dxdt.assign(e.xdot.data(), e.xdot.data() + 3 * n);
        };
        std::size_t obs = 0;
        auto observer = [&](const std::vector<double>& xs, double t) {
            if (obs < is_sample.size() && is_sample[obs]) record(times[obs], xs);
            ++obs;
            (void)t;
        };
        if (times.size() == 1) {
            observer(x, ta);
        } else {
            try {
                const double hmax = spec.integrator.max_step > 0 ? spec.integrator.max_step : 0.0;
                auto stepper = odeint::make_dense_output(
                    spec.integrator.abs_tol, spec.integrator.rel_tol, hmax,
                    odeint::runge_kutta_dopri5<std::vector<double>>());
                double h0 = std::min(spec.integrator.initial_step, times.back() - ta);
                if (hmax > 0) h0 = std::min(h0, hmax);
                odeint::integrate_times(stepper, rhs, x, times.begin(), times.end(), h0, observer,
                                        odeint::max_step_checker(100000));
            } catch (const RuntimeFailure&) {
                throw;
            } catch (const std::exception& e) {
                const Vec xv = Eigen::Map<const Vec>(x.data(), 3 * n);
                throw RuntimeFailure("integrator failed in [" + std::to_string(ta) + ", " +
                                     std::to_string(tb) + "], |x| = " + std::to_string(xv.norm()) +
                                     ": " + e.what());
            }
        }
        if (last) break;
    }
    return tr;
}

}  // namespace mafd
