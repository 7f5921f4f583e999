#pragma once

// Glue shared by the CLI and the acceptance runner: load a configured system,
// build per-topology models, design controllers, summarize runs.

#include "mafd/io.hpp"

namespace mafd {

struct System {
    io::NetworkConfig net;
    io::DroopConfig droop;
    std::shared_ptr<const Plant> plant;          ///< reference condition, all switches closed
    std::shared_ptr<const SwitchedModel> model;  ///< linearized about `plant`

    int size() const { return net.graph.size(); }
    const std::vector<std::string>& names() const { return net.graph.bus_names(); }
};

inline System make_system(io::NetworkConfig net, io::DroopConfig droop, int mode_cap = kDefaultModeCap) {
    System s;
    s.net = std::move(net);
    s.droop = std::move(droop);
    const auto& ref = s.net.condition(s.net.reference_condition);
    auto op = s.net.solve(ref);
    s.plant = std::make_shared<const Plant>(s.net.graph, op, s.droop.params);
    s.model = std::make_shared<const SwitchedModel>(build_switched_model(s.plant, mode_cap));
    return s;
}

inline System load_system(const io::fs::path& network, const io::fs::path& droop,
                          int mode_cap = kDefaultModeCap) {
    auto net = io::load_network(network);
    auto dc = io::load_droop(droop, net.graph.bus_names());
    return make_system(std::move(net), std::move(dc), mode_cap);
}

/// Nominal topology plus every single-switch outage that keeps the network
/// connected to the slack. Linear models are built when `linear` is set.
inline SimContext make_context(const System& s, bool linear = false) {
    SimContext ctx;
    ctx.plants[s.plant->graph().topology_id()] = s.plant;
    if (linear) ctx.models[s.plant->graph().topology_id()] = s.model;
    for (const auto& [name, closed] : s.net.graph.switches()) {
        (void)closed;
        const auto g = s.net.graph.with_switch(name, false);
        try {
            auto p = plant_for_topology(*s.plant, g, s.net.slack);
            ctx.plants[g.topology_id()] = p;
            if (linear)
                ctx.models[g.topology_id()] = std::make_shared<const SwitchedModel>(build_switched_model(p));
        } catch (const ConvergenceError&) {
            // islanding outage: no post-event model, reported if a scenario needs it
        }
    }
    return ctx;
}

struct Design {
    ControllerSet controllers;
    std::optional<GammaSearch> gamma_search;
    CertificateReport certificate;
    std::vector<std::pair<std::string, CertificateReport>> contingency_checks;

    bool certified() const {
        if (!certificate.passed()) return false;
        for (const auto& [name, r] : contingency_checks)
            if (!r.passed()) return false;
        return true;
    }
};

/// Synthesis plus independent re-verification. With `robust`, gamma is the
/// worst case over `contingencies` and the set is also checked against each
/// contingency model with a smaller or equal gamma.
inline Design design_controllers(const System& s, Structure structure, bool robust,
                                 const std::vector<std::string>& contingencies) {
    Design d;
    SynthesisOptions o = s.droop.synthesis;
    o.structure = structure;
    double gamma = 0.0;
    if (robust) {
        d.gamma_search = worst_case_gamma(*s.model, contingencies, s.net.slack);
        gamma = d.gamma_search->gamma;
    }
    d.controllers = synthesize(*s.model, o, gamma);
    d.controllers.topology = s.plant->graph().topology_id();
    d.certificate = verify_feasibility(d.controllers, *s.model, gamma, o.eps_feas);
    if (robust) {
        const auto pattern = structure == Structure::distributed
                                 ? SparsityPattern::from_graph(s.net.graph)
                                 : SparsityPattern::dense(s.size());
        for (const auto& c : d.gamma_search->contingencies) {
            if (c.skipped || c.gamma > gamma) continue;
            const auto g = s.net.graph.with_switch(c.name, false);
            auto p = std::make_shared<const Plant>(g, *c.op, s.droop.params);
            const auto m = build_switched_model(p);
            d.contingency_checks.emplace_back(
                c.name, verify_feasibility(d.controllers, m, 0.0, o.eps_feas, &pattern));
        }
    }
    return d;
}

/// Baseline gains: centralized design for the all-angle mode alone. The set
/// holds that single mode, which is the only one the baseline looks up.
inline ControllerSet design_stale_baseline(const System& s) {
    SwitchedModel one = *s.model;
    one.modes.resize(1);
    SynthesisOptions o = s.droop.synthesis;
    o.structure = Structure::centralized;
    auto cs = synthesize(one, o);
    cs.topology = s.plant->graph().topology_id();
    return cs;
}

struct RunSummary {
    std::string controller;
    double peak_angle = 0.0;      ///< max_t |d_delta(t)|_2 (rad)
    double peak_voltage = 0.0;    ///< max_t |d_V(t)|_2
    double terminal_angle = 0.0;  ///< |d_delta(T)|_2
    double terminal_voltage = 0.0;
    double l2_angle = 0.0, l2_voltage = 0.0;
    double settle_time = 0.0;  ///< last time |x|_2 >= 1e-3 (0 if never)
};

inline std::vector<double> angle_norms(const Trajectory& tr) {
    std::vector<double> v;
    for (const auto& x : tr.x) {
        double a = 0;
        for (int i = 0; i < tr.n; ++i) a += x(3 * i) * x(3 * i);
        v.push_back(std::sqrt(a));
    }
    return v;
}

inline std::vector<double> voltage_norms(const Trajectory& tr) {
    std::vector<double> v;
    for (const auto& x : tr.x) {
        double a = 0;
        for (int i = 0; i < tr.n; ++i) a += x(3 * i + 2) * x(3 * i + 2);
        v.push_back(std::sqrt(a));
    }
    return v;
}

inline RunSummary summarize(const Trajectory& tr, const std::string& controller) {
    RunSummary r;
    r.controller = controller;
    if (tr.size() == 0) return r;
    const auto a = angle_norms(tr), v = voltage_norms(tr);
    r.peak_angle = *std::max_element(a.begin(), a.end());
    r.peak_voltage = *std::max_element(v.begin(), v.end());
    r.terminal_angle = a.back();
    r.terminal_voltage = v.back();
    for (std::size_t k = 1; k < tr.size(); ++k) {
        const double h = tr.t[k] - tr.t[k - 1];
        r.l2_angle += 0.5 * h * (a[k] * a[k] + a[k - 1] * a[k - 1]);
        r.l2_voltage += 0.5 * h * (v[k] * v[k] + v[k - 1] * v[k - 1]);
    }
    r.l2_angle = std::sqrt(r.l2_angle);
    r.l2_voltage = std::sqrt(r.l2_voltage);
    for (std::size_t k = 0; k < tr.size(); ++k)
        if (tr.x[k].norm() >= 1e-3) r.settle_time = tr.t[k];
    return r;
}

inline void write_summary(const io::fs::path& path, const std::vector<RunSummary>& rows) {
    auto out = io::open_out(path);
    out << "controller,peak_angle_rad,peak_voltage_pu,terminal_angle_rad,terminal_voltage_pu,"
           "l2_angle,l2_voltage,settle_time_s\n";
    for (const auto& r : rows)
        out << r.controller << "," << io::fmt(r.peak_angle) << "," << io::fmt(r.peak_voltage) << ","
            << io::fmt(r.terminal_angle) << "," << io::fmt(r.terminal_voltage) << ","
            << io::fmt(r.l2_angle) << "," << io::fmt(r.l2_voltage) << "," << io::fmt(r.settle_time)
            << "\n";
}

}  // namespace mafd
