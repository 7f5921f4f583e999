// mafd: power flow, linearization, controller synthesis, simulation and
// verification for interconnected microgrids under mixed angle/frequency droop.
//
// Exit codes: 0 ok, 1 usage, 2 parse, 3 infeasible or failed certificate,
// 4 non-convergence, 5 runtime failure.

#include "mafd/mafd.hpp"

#include "CLI11.hpp"

#include <iostream>
#include <random>

namespace {

using namespace mafd;
namespace fs = std::filesystem;

enum Exit { kOk = 0, kUsage = 1, kParse = 2, kInfeasible = 3, kNoConvergence = 4, kRuntime = 5 };

struct Args {
    std::string network, droop, scenario, controllers, centralized, out = "out";
    std::uint64_t seed = 1;
    bool robust = false, plots = true;
    std::vector<std::string> contingencies;
    std::string structure;
    int probes = 6;
};

void need(const std::string& v, const char* flag) {
    if (v.empty()) throw CLI::RequiredError(flag);
}

Structure structure_of(const Args& a, const System& s) {
    if (a.structure.empty()) return s.droop.synthesis.structure;
    if (a.structure == "distributed") return Structure::distributed;
    if (a.structure == "centralized") return Structure::centralized;
    throw CLI::ValidationError("--structure", "must be 'distributed' or 'centralized'");
}

std::vector<std::string> contingencies_of(const Args& a, const System& s) {
    return a.contingencies.empty() ? s.net.contingencies : a.contingencies;
}

int cmd_powerflow(const Args& a) {
    need(a.network, "--network");
    const auto net = io::load_network(a.network);
    std::vector<OperatingPoint> solved;
    int rc = kOk;
    for (const auto& c : net.conditions) {
        try {
            auto op = net.solve(c);
            const auto t = net.targets(c);
            double res = 0.0;
            for (int i = 0; i < op.size(); ++i)
                if (i != net.slack)
                    res = std::max({res, std::abs(op.P_inj(i) - t.P(i)), std::abs(op.Q_inj(i) - t.Q(i))});
            const double dV = (op.V - c.reference.V).cwiseAbs().maxCoeff();
            const double dd = rad2deg((op.delta - c.reference.delta).cwiseAbs().maxCoeff());
            std::cout << "condition " << c.name << " [" << net.graph_for(c.open_switches).topology_id()
                      << "]  mismatch " << res << "  max|V - V_tab| " << dV
                      << "  max|delta - delta_tab| " << dd << " deg\n";
            solved.push_back(std::move(op));
        } catch (const ConvergenceError& e) {
            std::cerr << "condition " << c.name << ": " << e.what() << " (residual " << e.residual()
                      << ")\n";
            rc = kNoConvergence;
        }
    }
    io::write_operating_points(fs::path(a.out) / "operating_points.csv", solved);
    std::cout << "wrote " << (fs::path(a.out) / "operating_points.csv").string() << "\n";
    return rc;
}

int cmd_linearize(const Args& a) {
    need(a.network, "--network");
    need(a.droop, "--droop");
    const auto s = load_system(a.network, a.droop);
    const fs::path out = a.out;
    io::write_matrix_csv(out / "H.csv", s.model->H);
    auto modes = io::open_out(out / "modes.csv");
    modes << "sigma,matrix,row,col,value\n";
    auto check = io::open_out(out / "linearization_check.csv");
    check << "sigma,fd_relative_deviation\n";
    double worst = 0.0;
    for (const auto& m : s.model->modes) {
        const auto sig = m.sigma.str();
        for (const auto& [name, M] : {std::pair<const char*, const Mat*>{"A", &m.A}, {"B1", &m.B1},
                                      {"B2", &m.B2}, {"C", &m.C}, {"D", &m.D}})
            io::write_long(modes, sig, name, *M);
        const double dev = relative_deviation(m, finite_difference_mode(*s.plant, m.sigma));
        worst = std::max(worst, dev);
        check << sig << "," << io::fmt(dev) << "\n";
    }
    std::cout << s.model->mode_count() << " modes, state dimension " << 3 * s.size()
              << ", worst finite-difference deviation " << worst << "\n";
    const auto bad = structurally_infeasible_modes(*s.model);
    if (!bad.empty())
        std::cout << "warning: " << bad.size()
                  << " modes have an unobservable equilibrium direction; synthesis will be infeasible\n";
    return kOk;
}

int cmd_synthesize(const Args& a) {
    need(a.network, "--network");
    need(a.droop, "--droop");
    const auto s = load_system(a.network, a.droop);
    const auto d = design_controllers(s, structure_of(a, s), a.robust, contingencies_of(a, s));
    const fs::path out = a.out;
    if (d.gamma_search) {
        auto g = io::open_out(out / "gamma.csv");
        g << "contingency,gamma,status\n";
        for (const auto& c : d.gamma_search->contingencies) {
            g << c.name << "," << io::fmt(c.gamma) << "," << (c.skipped ? "skipped" : "ok") << "\n";
            if (c.skipped) std::cerr << "warning: " << c.warning << "\n";
        }
        std::cout << "worst-case gamma " << d.gamma_search->gamma << " (" << d.gamma_search->argmax
                  << " open)\n";
    }
    std::ostringstream rep;
    rep << "structure " << to_string(d.controllers.structure) << "\nmargin " << d.controllers.margin
        << "\n" << d.certificate.str();
    for (const auto& [name, r] : d.contingency_checks)
        rep << "\n# against " << name << "-open topology\n" << r.str();
    io::open_out(out / "certificate.txt") << rep.str();
    if (!d.certified()) {
        std::cerr << "certificate failed; no bundle written (see " << (out / "certificate.txt").string()
                  << ")\n";
        return kInfeasible;
    }
    io::save_controllers(out, d.controllers, s.names());
    std::cout << d.controllers.modes.size() << " gains, margin " << d.controllers.margin
              << ", min eig P " << d.certificate.min_eig_P << "; bundle in " << out.string() << "\n";
    return kOk;
}

ControllerSet obtain(const System& s, const std::string& bundle, Structure st) {
    if (!bundle.empty()) {
        auto cs = io::load_controllers(bundle);
        if (cs.n != s.size()) throw mafd::ParseError(bundle + ": controller set size does not match network");
        return cs;
    }
    std::cout << "no " << to_string(st) << " bundle given; synthesizing\n";
    auto d = design_controllers(s, st, false, {});
    if (!d.certified()) throw InfeasibleError("synthesized controllers failed verification");
    return d.controllers;
}

int cmd_simulate(const Args& a) {
    need(a.network, "--network");
    need(a.droop, "--droop");
    need(a.scenario, "--scenario");
    const auto s = load_system(a.network, a.droop);
    const auto sc = io::load_scenario(a.scenario, s.net);
    const auto ctx = make_context(s, sc.spec.linear);
    std::vector<ControllerKind> runs = sc.compare.empty() ? std::vector{sc.spec.controller} : sc.compare;
    std::optional<ControllerSet> dist, cent, stale;
    const fs::path out = a.out;
    std::vector<RunSummary> rows;
    for (auto k : runs) {
        const ControllerSet* cs = nullptr;
        if (k == ControllerKind::C2) {
            if (!cent) cent = obtain(s, a.centralized, Structure::centralized);
            cs = &*cent;
        } else if (k == ControllerKind::C3) {
            if (!stale) stale = design_stale_baseline(s);
            cs = &*stale;
        } else if (k != ControllerKind::none) {
            if (!dist) dist = obtain(s, a.controllers, Structure::distributed);
            cs = &*dist;
        }
        auto spec = sc.spec;
        spec.controller = k;
        const auto tr = run_scenario(spec, ctx, cs);
        const std::string tag = to_string(k);
        io::write_trajectory(out / ("trajectory_" + tag + ".csv"), tr, s.names());
        if (a.plots) plot::write_error_plots((out / (spec.name + "_" + tag)).string(), tr, s.names(), spec.name + " " + tag);
        if (cs && (k == ControllerKind::C1 || k == ControllerKind::C2)) {
            const auto dr = dissipation_residual(tr, *cs);
            io::write_dissipation(out / ("dissipation_" + tag + ".csv"), dr);
            std::cout << tag << " dissipation: min margin in neighborhood " << dr.min_margin_inside
                      << ", violations " << dr.violations << " (outside: " << dr.violations_outside << ")\n";
        }
        rows.push_back(summarize(tr, tag));
        const auto& r = rows.back();
        std::cout << tag << ": peak |d_delta| " << r.peak_angle << " rad, peak |d_V| " << r.peak_voltage
                  << ", terminal |d_delta| " << r.terminal_angle << ", terminal |d_V| " << r.terminal_voltage
                  << ", settle " << r.settle_time << " s\n";
    }
    write_summary(out / "summary.csv", rows);
    return kOk;
}

int cmd_verify(const Args& a) {
    need(a.network, "--network");
    need(a.droop, "--droop");
    need(a.controllers, "--controllers");
    const auto s = load_system(a.network, a.droop);
    const auto cs = io::load_controllers(a.controllers);
    if (cs.n != s.size()) throw mafd::ParseError("controller set size does not match network");
    const fs::path out = a.out;
    std::ostringstream rep;
    bool ok = true;

    const auto cert = verify_feasibility(cs, *s.model, cs.gamma, s.droop.synthesis.eps_feas);
    rep << "# certificate (gamma " << cs.gamma << ")\n" << cert.str();
    ok = ok && cert.passed();

    const auto schur = schur_equivalence_check(cs, *s.model, cs.gamma);
    {
        auto f = io::open_out(out / "schur.csv");
        f << "sigma,min_eig_M,min_eig_Gamma,agree,passed\n";
        int bad = 0;
        for (const auto& c : schur) {
            f << c.sigma.str() << "," << io::fmt(c.min_eig_M) << "," << io::fmt(c.min_eig_Gamma) << ","
              << c.agree << "," << c.passed << "\n";
            bad += !c.passed;
        }
        rep << "# schur equivalence: " << schur.size() - bad << "/" << schur.size() << " modes pass\n";
        ok = ok && bad == 0;
    }

    if (a.robust || !a.contingencies.empty()) {
        const auto gs = worst_case_gamma(*s.model, contingencies_of(a, s), s.net.slack);
        const auto pattern = cs.structure == Structure::distributed ? SparsityPattern::from_graph(s.net.graph)
                                                                    : SparsityPattern::dense(s.size());
        rep << "# contingencies (design gamma " << cs.gamma << ")\n";
        for (const auto& c : gs.contingencies) {
            if (c.skipped) {
                rep << c.name << " skipped: " << c.warning << "\n";
                continue;
            }
            double err = 0.0;
            for (const auto& p : perturbation_structure_check(cs, *s.model, c.H_new, cs.gamma))
                err = std::max(err, p.structure_error);
            const auto g = s.net.graph.with_switch(c.name, false);
            const auto m = build_switched_model(std::make_shared<const Plant>(g, *c.op, s.droop.params));
            const auto r = verify_feasibility(cs, m, 0.0, s.droop.synthesis.eps_feas, &pattern);
            const bool covered = c.gamma <= cs.gamma;
            rep << c.name << " gamma " << c.gamma << (covered ? " (covered)" : " (exceeds design gamma)")
                << "  perturbation-identity error " << err << "  worst M on new topology " << r.worst_M()
                << "  " << (r.passed() ? "PASS" : "FAIL") << "\n";
            if (covered) ok = ok && r.passed();
        }
    }

    // L2-gain probes: seeded random sinusoids on the linear closed loop.
    {
        const auto ctx = make_context(s, true);
        std::mt19937_64 rng(a.seed);
        std::uniform_int_distribution<int> mg(0, s.size() - 1), ch(0, 1);
        std::uniform_real_distribution<double> amp(0.02, 0.2), freq(0.2, 5.0), ph(0.0, 2 * kPi);
        std::vector<std::pair<std::string, DisturbanceProfile>> probes;
        for (int k = 0; k < a.probes; ++k) {
            DisturbanceProfile d;
            Sinusoid q;
            q.microgrid = mg(rng);
            q.channel = ch(rng) ? Channel::Q : Channel::P;
            q.amplitude = amp(rng);
            q.frequency = freq(rng);
            q.phase = ph(rng);
            d.sines.push_back(q);
            probes.emplace_back("probe" + std::to_string(k + 1), d);
        }
        ScenarioSpec base;
        base.horizon = 10.0;
        base.linear = true;
        base.controller = ControllerKind::C1;
        base.integrator.output_interval = 1e-2;
        GainEstimate est;
        try {
            est = estimate_l2_gain(ctx, &cs, base, probes);
        } catch (const RuntimeFailure& e) {
            rep << "# L2 gain probes diverged: " << e.what() << "\n";
            ok = false;
        }
        auto f = io::open_out(out / "l2_gain.csv");
        f << "probe,y_l2,w_l2,ratio\n";
        for (const auto& p : est.probes)
            f << p.name << "," << io::fmt(p.y_norm) << "," << io::fmt(p.w_norm) << ","
              << (p.ratio ? io::fmt(*p.ratio) : "NA") << "\n";
        rep << "# L2 gain estimate (seed " << a.seed << ", " << a.probes << " probes): "
            << (est.gain() ? std::to_string(*est.gain()) : "n/a") << "\n";
    }

    if (!a.scenario.empty()) {
        const auto sc = io::load_scenario(a.scenario, s.net);
        const auto ctx = make_context(s, sc.spec.linear);
        auto spec = sc.spec;
        spec.controller = ControllerKind::C1;
        const auto tr = run_scenario(spec, ctx, &cs);
        const auto dr = dissipation_residual(tr, cs);
        io::write_dissipation(out / "dissipation.csv", dr);
        rep << "# dissipation along " << spec.name << "\n" << dr.str();
        ok = ok && dr.violations == 0;
    }
    rep << "verdict " << (ok ? "PASS" : "FAIL") << "\n";
    io::open_out(out / "verify_report.txt") << rep.str();
    std::cout << rep.str();
    return ok ? kOk : kInfeasible;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mixed angle/frequency droop microgrid toolkit"};
    app.require_subcommand(1);
    Args a;
    auto common = [&](CLI::App* c) {
        c->add_option("--network", a.network, "network config (JSON)")->check(CLI::ExistingFile);
        c->add_option("--droop", a.droop, "droop/synthesis config (JSON)")->check(CLI::ExistingFile);
        c->add_option("--scenario", a.scenario, "scenario config (JSON)")->check(CLI::ExistingFile);
        c->add_option("--controllers", a.controllers, "controller bundle directory")->check(CLI::ExistingDirectory);
        c->add_option("--centralized-controllers", a.centralized, "centralized bundle (simulate, C2)")
            ->check(CLI::ExistingDirectory);
        c->add_option("--out", a.out, "output directory")->capture_default_str();
        c->add_option("--seed", a.seed, "seed for probe generation")->capture_default_str();
        c->add_flag("--robust", a.robust, "worst-case gamma over contingencies");
        c->add_option("--contingencies", a.contingencies, "switches to open, comma separated")->delimiter(',');
        c->add_option("--structure", a.structure, "distributed | centralized");
        c->add_option("--probes", a.probes, "number of L2-gain probes (verify)")->capture_default_str();
        c->add_flag("!--no-plots", a.plots, "skip SVG plots");
    };
    struct Sub {
        const char* name;
        const char* help;
        int (*fn)(const Args&);
    };
    const Sub subs[] = {{"powerflow", "solve operating points for every configured condition", cmd_powerflow},
                        {"linearize", "per-mode linear models and finite-difference check", cmd_linearize},
                        {"synthesize", "controller synthesis and certificate", cmd_synthesize},
                        {"simulate", "closed-loop scenario simulation", cmd_simulate},
                        {"verify", "re-verify a controller bundle", cmd_verify}};
    std::vector<CLI::App*> apps;
    for (const auto& s : subs) {
        apps.push_back(app.add_subcommand(s.name, s.help));
        common(apps.back());
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }
    try {
        for (std::size_t k = 0; k < apps.size(); ++k)
            if (apps[k]->parsed()) return subs[k].fn(a);
    } catch (const CLI::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const mafd::ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kParse;
    } catch (const InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << "\n";
        return kInfeasible;
    } catch (const ConvergenceError& e) {
        std::cerr << "did not converge: " << e.what() << "\n";
        return kNoConvergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntime;
    }
    return kUsage;
}
