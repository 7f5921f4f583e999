#pragma once

// Config ingestion (JSON) and CSV emission. Schemas: docs/csv_schemas.md.

#include "mafd/verify.hpp"

#include "json.hpp"

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace mafd::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kNetworkSchema = "mafd-network/1";
inline constexpr const char* kDroopSchema = "mafd-droop/1";
inline constexpr const char* kScenarioSchema = "mafd-scenario/1";
inline constexpr const char* kControllerSchema = "mafd-controllers/1";
inline constexpr const char* kCsvVersion = "1";

// ---------------------------------------------------------------- numbers

/// Shortest decimal form that parses back to exactly `v`.
inline std::string fmt(double v) {
    if (v == 0.0) return "0";  // also folds -0
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    double v = 0.0;
    auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size())
        throw ParseError(where + ": '" + std::string(s) + "' is not a number");
    return v;
}

/// Shortest decimal degree string d with deg2rad(d) == rad exactly. Not
/// every double is reachable that way; those fall back to the shortest
/// round-trip form of rad2deg(rad), which re-ingests within one ulp.
inline std::string fmt_deg(double rad) {
    const double d0 = rad2deg(rad);
    auto ok = [&](double d) { return deg2rad(d) == rad; };
    std::string best;
    auto consider = [&](double d) {
        for (int prec = 1; prec <= 17; ++prec) {
            char buf[64];
            auto r = std::to_chars(buf, buf + sizeof buf, d, std::chars_format::general, prec);
            std::string s(buf, r.ptr);
            double back = 0.0;
            std::from_chars(s.data(), s.data() + s.size(), back);
            if (ok(back)) {
                if (best.empty() || s.size() < best.size()) best = s;
                return;
            }
        }
    };
    double d = d0;
    for (int k = 0; k < 8; ++k, d = std::nextafter(d, INFINITY)) consider(d);
    d = d0;
    for (int k = 0; k < 8; ++k, d = std::nextafter(d, -INFINITY)) consider(d);
    if (best.empty()) return fmt(d0);
    return best == "-0" ? "0" : best;
}

// ---------------------------------------------------------------- CSV

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Reads a CSV file; lines starting with '#' are comments.
inline CsvTable read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    CsvTable t;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line == "\r") continue;
        auto cells = split_csv_line(line);
        if (t.header.empty())
            t.header = std::move(cells);
        else if (cells.size() != t.header.size())
            throw ParseError(path.string() + ": row has " + std::to_string(cells.size()) +
                             " fields, header has " + std::to_string(t.header.size()));
        else
            t.rows.push_back(std::move(cells));
    }
    if (t.header.empty()) throw ParseError(path.string() + ": empty CSV");
    return t;
}

inline std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw RuntimeFailure("cannot write '" + path.string() + "'");
    return out;
}

inline void write_matrix_csv(const fs::path& path, const Mat& m) {
    auto out = open_out(path);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << fmt(m(i, j));
        out << "\n";
    }
}

inline Mat read_matrix_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> r;
        for (const auto& c : split_csv_line(line)) r.push_back(parse_double(c, path.string()));
        if (!rows.empty() && r.size() != rows[0].size())
            throw ParseError(path.string() + ": ragged matrix");
        rows.push_back(std::move(r));
    }
    Mat m(rows.size(), rows.empty() ? 0 : rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
    return m;
}

// ---------------------------------------------------------------- operating-point table

inline const std::vector<std::string>& operating_point_columns() {
    static const std::vector<std::string> c{"condition", "microgrid", "P_inj_ref", "Q_inj_ref",
                                            "P_load_ref", "Q_load_ref", "V_ref", "delta_ref_deg"};
    return c;
}

/// Rows grouped by condition, in file order.
inline std::vector<OperatingPoint> read_operating_points(const fs::path& path) {
    const auto t = read_csv(path);
    if (t.header != operating_point_columns())
        throw ParseError(path.string() + ": unexpected header (see docs/csv_schemas.md)");
    std::vector<OperatingPoint> ops;
    std::vector<std::vector<std::array<double, 6>>> vals;
    for (const auto& r : t.rows) {
        auto it = std::find_if(ops.begin(), ops.end(), [&](auto& o) { return o.condition == r[0]; });
        if (it == ops.end()) {
            ops.push_back({});
            ops.back().condition = r[0];
            vals.emplace_back();
            it = ops.end() - 1;
        }
        auto& v = vals[it - ops.begin()];
        if (std::find(it->names.begin(), it->names.end(), r[1]) != it->names.end())
            throw ParseError(path.string() + ": duplicate microgrid '" + r[1] + "' in condition '" +
                             r[0] + "'");
        it->names.push_back(r[1]);
        std::array<double, 6> a{};
        for (int k = 0; k < 6; ++k) a[k] = parse_double(r[2 + k], path.string());
        if (!(a[4] > 0)) throw ParseError(path.string() + ": V_ref must be positive");
        v.push_back(a);
    }
    for (std::size_t c = 0; c < ops.size(); ++c) {
        const int n = static_cast<int>(vals[c].size());
        auto& o = ops[c];
        o.P_inj.resize(n), o.Q_inj.resize(n), o.P_load.resize(n), o.Q_load.resize(n);
        o.V.resize(n), o.delta.resize(n);
        for (int i = 0; i < n; ++i) {
            const auto& a = vals[c][i];
            o.P_inj(i) = a[0], o.Q_inj(i) = a[1], o.P_load(i) = a[2], o.Q_load(i) = a[3];
            o.V(i) = a[4], o.delta(i) = deg2rad(a[5]);
        }
    }
    return ops;
}

inline void write_operating_points(std::ostream& out, const std::vector<OperatingPoint>& ops) {
    const auto& cols = operating_point_columns();
    for (std::size_t k = 0; k < cols.size(); ++k) out << (k ? "," : "") << cols[k];
    out << "\n";
    for (const auto& o : ops)
        for (int i = 0; i < o.size(); ++i) {
            const std::string name =
                i < static_cast<int>(o.names.size()) ? o.names[i] : "mg" + std::to_string(i + 1);
            out << o.condition << "," << name << "," << fmt(o.P_inj(i)) << "," << fmt(o.Q_inj(i))
                << "," << fmt(o.P_load.size() ? o.P_load(i) : 0.0) << ","
                << fmt(o.Q_load.size() ? o.Q_load(i) : 0.0) << "," << fmt(o.V(i)) << ","
                << fmt_deg(o.delta(i)) << "\n";
        }
}

inline void write_operating_points(const fs::path& path, const std::vector<OperatingPoint>& ops) {
    auto out = open_out(path);
    write_operating_points(out, ops);
}

// ---------------------------------------------------------------- JSON helpers

inline json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline void expect_schema(const json& j, const char* schema, const fs::path& path) {
    if (!j.is_object() || !j.contains("schema") || j["schema"] != schema)
        throw ParseError(path.string() + ": expected \"schema\": \"" + schema + "\"");
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) throw ParseError(where + ": missing '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError(where + ": field '" + key + "': " + e.what());
    }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    return j.contains(key) ? get<T>(j, key, where) : fallback;
}

// ---------------------------------------------------------------- network

struct Condition {
    std::string name;
    std::vector<std::string> open_switches;
    OperatingPoint reference;  ///< tabulated values (all buses)
};

struct NetworkConfig {
    std::string name;
    AdmittanceGraph graph;  ///< all switches closed
    int slack = 0;
    std::vector<Condition> conditions;
    std::string reference_condition;  ///< linearization point
    std::vector<std::string> contingencies;

    const Condition& condition(const std::string& c) const {
        for (const auto& x : conditions)
            if (x.name == c) return x;
        throw ParseError("unknown condition '" + c + "'");
    }
    int index_of(const std::string& bus) const {
        const auto& b = graph.bus_names();
        auto it = std::find(b.begin(), b.end(), bus);
        if (it == b.end()) throw ParseError("unknown microgrid '" + bus + "'");
        return static_cast<int>(it - b.begin());
    }
    AdmittanceGraph graph_for(const std::vector<std::string>& open) const {
        AdmittanceGraph g = graph;
        for (const auto& s : open) g = g.with_switch(s, false);
        return g;
    }
    PowerFlowTargets targets(const Condition& c) const {
        auto t = targets_from(c.reference, slack);
        t.condition = c.name;
        return t;
    }
    OperatingPoint solve(const Condition& c) const {
        auto op = solve_operating_point(graph_for(c.open_switches), targets(c));
        op.names = graph.bus_names();
        return op;
    }
};

/// Reorders a tabulated operating point to the bus order of the network.
inline OperatingPoint align(const OperatingPoint& op, const std::vector<std::string>& buses,
                            const std::string& where) {
    const int n = static_cast<int>(buses.size());
    if (op.size() != n)
        throw ParseError(where + ": condition '" + op.condition + "' has " +
                         std::to_string(op.size()) + " rows, network has " + std::to_string(n) +
                         " microgrids");
    OperatingPoint o = op;
    o.names = buses;
    for (int i = 0; i < n; ++i) {
        auto it = std::find(op.names.begin(), op.names.end(), buses[i]);
        if (it == op.names.end())
            throw ParseError(where + ": condition '" + op.condition + "' lacks microgrid '" +
                             buses[i] + "'");
        const auto k = it - op.names.begin();
        o.P_inj(i) = op.P_inj(k), o.Q_inj(i) = op.Q_inj(k), o.P_load(i) = op.P_load(k);
        o.Q_load(i) = op.Q_load(k), o.V(i) = op.V(k), o.delta(i) = op.delta(k);
    }
    return o;
}

inline NetworkConfig load_network(const fs::path& path) {
    const json j = read_json(path);
    expect_schema(j, kNetworkSchema, path);
    const std::string where = path.string();
    NetworkConfig nc;
    try {
        nc.name = get_or<std::string>(j, "name", path.stem().string(), where);
        const auto buses = get<std::vector<std::string>>(j, "buses", where);
        if (std::set<std::string>(buses.begin(), buses.end()).size() != buses.size())
            throw ParseError(where + ": duplicate bus names");
        auto idx = [&](const std::string& b) {
            auto it = std::find(buses.begin(), buses.end(), b);
            if (it == buses.end()) throw ParseError(where + ": unknown bus '" + b + "'");
            return static_cast<int>(it - buses.begin());
        };
        std::vector<Line> lines;
        for (const auto& l : get<json>(j, "lines", where)) {
            Line line;
            line.name = get_or<std::string>(l, "name", "line" + std::to_string(lines.size() + 1), where);
            line.from = idx(get<std::string>(l, "from", where));
            line.to = idx(get<std::string>(l, "to", where));
            line.switch_name = get_or<std::string>(l, "switch", "", where);
            if (l.contains("r") || l.contains("x")) {
                line.model = LineModel::series_impedance;
                line.value = Complex(get_or<double>(l, "r", 0.0, where), get_or<double>(l, "x", 0.0, where));
            } else {
                line.model = LineModel::admittance_entry;
                const double mag = get<double>(l, "Y_mag", where);
                const double ang = l.contains("Y_angle_deg") ? deg2rad(get<double>(l, "Y_angle_deg", where))
                                                              : get<double>(l, "Y_angle", where);
                line.value = std::polar(mag, ang);
            }
            lines.push_back(line);
        }
        std::vector<Complex> shunts(buses.size());
        if (j.contains("shunts"))
            for (const auto& [bus, s] : j["shunts"].items())
                shunts[idx(bus)] = Complex(get_or<double>(s, "g", 0.0, where), get_or<double>(s, "b", 0.0, where));
        nc.graph = AdmittanceGraph(buses, lines, shunts);
        nc.slack = idx(get<std::string>(j, "slack", where));

        std::vector<OperatingPoint> table;
        if (j.contains("table")) {
            fs::path tp = get<std::string>(j, "table", where);
            if (tp.is_relative()) tp = path.parent_path() / tp;
            table = read_operating_points(tp);
        }
        for (const auto& c : get<json>(j, "conditions", where)) {
            Condition cond;
            cond.name = get<std::string>(c, "name", where);
            cond.open_switches = get_or<std::vector<std::string>>(c, "open", {}, where);
            for (const auto& s : cond.open_switches)
                if (!nc.graph.switches().count(s))
                    throw ParseError(where + ": condition '" + cond.name + "' opens unknown switch '" + s + "'");
            if (c.contains("buses")) {
                OperatingPoint op;
                op.condition = cond.name;
                const int n = static_cast<int>(buses.size());
                op.names = buses;
                op.P_inj = op.Q_inj = op.P_load = op.Q_load = op.delta = Vec::Zero(n);
                op.V = Vec::Ones(n);
                std::vector<bool> seen(n, false);
                for (const auto& [bus, b] : c["buses"].items()) {
                    const int i = idx(bus);
                    seen[i] = true;
                    op.P_inj(i) = get_or<double>(b, "P_inj", 0.0, where);
                    op.Q_inj(i) = get_or<double>(b, "Q_inj", 0.0, where);
                    op.P_load(i) = get_or<double>(b, "P_load", 0.0, where);
                    op.Q_load(i) = get_or<double>(b, "Q_load", 0.0, where);
                    op.V(i) = get_or<double>(b, "V", 1.0, where);
                    op.delta(i) = deg2rad(get_or<double>(b, "delta_deg", 0.0, where));
                }
                for (int i = 0; i < n; ++i)
                    if (!seen[i] && i != nc.slack)
                        throw ParseError(where + ": condition '" + cond.name + "' lacks bus '" + buses[i] + "'");
                cond.reference = op;
            } else {
                auto it = std::find_if(table.begin(), table.end(),
                                       [&](auto& o) { return o.condition == cond.name; });
                if (it == table.end())
                    throw ParseError(where + ": condition '" + cond.name + "' has neither buses nor table rows");
                cond.reference = align(*it, buses, where);
            }
            nc.conditions.push_back(std::move(cond));
        }
        if (nc.conditions.empty()) throw ParseError(where + ": no conditions");
        nc.reference_condition = get_or<std::string>(j, "reference_condition", nc.conditions[0].name, where);
        const auto& ref = nc.condition(nc.reference_condition);
        if (!ref.open_switches.empty())
            throw ParseError(where + ": the reference condition must have every switch closed");
        if (get_or<bool>(j, "calibrate_shunts", false, where))
            nc.graph = with_calibrated_shunts(nc.graph, ref.reference);
        nc.contingencies = get_or<std::vector<std::string>>(j, "contingencies", {}, where);
        for (const auto& s : nc.contingencies)
            if (!nc.graph.switches().count(s))
                throw ParseError(where + ": contingency on unknown switch '" + s + "'");
    } catch (const ModelError& e) {
        throw ParseError(where + ": " + e.what());
    }
    return nc;
}

// ---------------------------------------------------------------- droop

struct DroopConfig {
    DroopParams params;
    SynthesisOptions synthesis;
};

inline MicrogridDroop read_droop(const json& j, MicrogridDroop base, const std::string& where) {
    base.J_delta = get_or(j, "J_delta", base.J_delta, where);
    base.D_delta = get_or(j, "D_delta", base.D_delta, where);
    base.J_omega = get_or(j, "J_omega", base.J_omega, where);
    base.D_omega = get_or(j, "D_omega", base.D_omega, where);
    base.J_V = get_or(j, "J_V", base.J_V, where);
    base.D_V = get_or(j, "D_V", base.D_V, where);
    base.angle_leakage = get_or(j, "angle_leakage", base.angle_leakage, where);
    return base;
}

inline DroopConfig load_droop(const fs::path& path, const std::vector<std::string>& buses) {
    const json j = read_json(path);
    expect_schema(j, kDroopSchema, path);
    const std::string where = path.string();
    DroopConfig dc;
    try {
        const auto prop = get_or<std::string>(j, "omega_propagation", "literal", where);
        if (prop == "literal")
            dc.params.omega_propagation = OmegaPropagation::literal;
        else if (prop == "propagated")
            dc.params.omega_propagation = OmegaPropagation::propagated;
        else
            throw ParseError(where + ": omega_propagation must be 'literal' or 'propagated'");
        const auto def = read_droop(get<json>(j, "default", where), MicrogridDroop{}, where);
        dc.params.mg.assign(buses.size(), def);
        if (j.contains("overrides"))
            for (const auto& [bus, o] : j["overrides"].items()) {
                auto it = std::find(buses.begin(), buses.end(), bus);
                if (it == buses.end()) throw ParseError(where + ": override for unknown microgrid '" + bus + "'");
                dc.params.mg[it - buses.begin()] = read_droop(o, def, where);
            }
        dc.params.validate(static_cast<int>(buses.size()));
        if (j.contains("synthesis")) {
            const auto& s = j["synthesis"];
            auto& o = dc.synthesis;
            const auto st = get_or<std::string>(s, "structure", "distributed", where);
            if (st != "distributed" && st != "centralized")
                throw ParseError(where + ": structure must be 'distributed' or 'centralized'");
            o.structure = st == "distributed" ? Structure::distributed : Structure::centralized;
            o.q = get_or(s, "q", o.q, where);
            o.eps_feas = get_or(s, "eps_feas", o.eps_feas, where);
            o.p_max = get_or(s, "p_max", o.p_max, where);
            o.k_max = get_or(s, "k_max", o.k_max, where);
            o.sr_max = get_or(s, "sr_max", o.sr_max, where);
            if (!(o.q > 0)) throw ParseError(where + ": q must be positive (Q = -q I)");
        }
    } catch (const ModelError& e) {
        throw ParseError(where + ": " + e.what());
    }
    return dc;
}

// ---------------------------------------------------------------- scenario

struct ScenarioConfig {
    ScenarioSpec spec;
    std::vector<std::string> initial_open;
    std::vector<ControllerKind> compare;
};

inline ControllerKind parse_controller(const std::string& s, const std::string& where) {
    if (s == "C1") return ControllerKind::C1;
    if (s == "C2") return ControllerKind::C2;
    if (s == "C3") return ControllerKind::C3;
    if (s == "none") return ControllerKind::none;
    throw ParseError(where + ": unknown controller '" + s + "'");
}

inline Channel parse_channel(const std::string& s, const std::string& where) {
    if (s == "P") return Channel::P;
    if (s == "Q") return Channel::Q;
    throw ParseError(where + ": channel must be 'P' or 'Q'");
}

inline ScenarioConfig load_scenario(const fs::path& path, const NetworkConfig& net) {
    const json j = read_json(path);
    expect_schema(j, kScenarioSchema, path);
    const std::string where = path.string();
    const int n = net.graph.size();
    ScenarioConfig sc;
    auto& s = sc.spec;
    try {
        auto mg = [&](const json& o) { return net.index_of(get<std::string>(o, "microgrid", where)); };
        s.name = get_or<std::string>(j, "name", path.stem().string(), where);
        s.horizon = get<double>(j, "horizon", where);
        s.integrator.output_interval = get_or(j, "output_interval", s.integrator.output_interval, where);
        s.controller = parse_controller(get_or<std::string>(j, "controller", "C1", where), where);
        s.linear = get_or(j, "linear", false, where);
        const auto fr = get_or<std::string>(j, "c3_freeze", "both", where);
        if (fr != "both" && fr != "angle") throw ParseError(where + ": c3_freeze must be 'both' or 'angle'");
        s.freeze = fr == "both" ? FreezeChannels::both : FreezeChannels::angle;
        if (j.contains("integrator")) {
            s.integrator.abs_tol = get_or(j["integrator"], "abs_tol", s.integrator.abs_tol, where);
            s.integrator.rel_tol = get_or(j["integrator"], "rel_tol", s.integrator.rel_tol, where);
            s.integrator.initial_step = get_or(j["integrator"], "initial_step", s.integrator.initial_step, where);
            s.integrator.max_step = get_or(j["integrator"], "max_step", s.integrator.max_step, where);
        }
        s.loss.assign(n, {});
        for (const auto& l : get_or<json>(j, "loss", json::array(), where))
            s.loss[mg(l)].push_back({get<double>(l, "start", where), get<double>(l, "end", where)});
        for (const auto& d : get_or<json>(j, "disturbances", json::array(), where)) {
            const auto type = get_or<std::string>(d, "type", "pulse", where);
            const int i = mg(d);
            const Channel ch = parse_channel(get_or<std::string>(d, "channel", "P", where), where);
            if (type == "pulse") {
                s.disturbance.pulses.push_back({i, ch, get<double>(d, "start", where), get<double>(d, "end", where),
                                                get<double>(d, "amplitude", where)});
            } else if (type == "sine") {
                Sinusoid q;
                q.microgrid = i, q.channel = ch;
                q.amplitude = get<double>(d, "amplitude", where);
                q.frequency = get<double>(d, "frequency", where);
                q.phase = get_or(d, "phase", 0.0, where);
                q.start = get_or(d, "start", 0.0, where);
                q.end = get_or(d, "end", s.horizon, where);
                s.disturbance.sines.push_back(q);
            } else {
                throw ParseError(where + ": disturbance type must be 'pulse' or 'sine'");
            }
        }
        if (j.contains("topology")) {
            const auto& t = j["topology"];
            sc.initial_open = get_or<std::vector<std::string>>(t, "initial_open", {}, where);
            for (const auto& e : get_or<json>(t, "events", json::array(), where)) {
                TopologyEvent ev;
                ev.time = get<double>(e, "time", where);
                ev.switch_name = get<std::string>(e, "switch", where);
                const auto act = get<std::string>(e, "action", where);
                if (act != "open" && act != "close") throw ParseError(where + ": action must be 'open' or 'close'");
                ev.close = act == "close";
                if (!net.graph.switches().count(ev.switch_name))
                    throw ParseError(where + ": unknown switch '" + ev.switch_name + "'");
                s.events.push_back(ev);
            }
        }
        s.initial_topology = net.graph_for(sc.initial_open).topology_id();
        if (j.contains("x0")) {
            const auto v = get<std::vector<double>>(j, "x0", where);
            s.x0 = Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
        }
        for (const auto& c : get_or<std::vector<std::string>>(j, "compare", {}, where))
            sc.compare.push_back(parse_controller(c, where));
        s.validate(n);
    } catch (const ModelError& e) {
        throw ParseError(where + ": " + e.what());
    }
    return sc;
}

// ---------------------------------------------------------------- controllers

inline void write_long(std::ostream& out, const std::string& sigma, const std::string& name, const Mat& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index k = 0; k < m.cols(); ++k)
            if (m(i, k) != 0.0) out << sigma << "," << name << "," << i << "," << k << "," << fmt(m(i, k)) << "\n";
}

/// Directory bundle: manifest.json, P.csv, gains.csv (K_j), certificates.csv (V, S, R, Q).
inline void save_controllers(const fs::path& dir, const ControllerSet& cs,
                             const std::vector<std::string>& names) {
    fs::create_directories(dir);
    json m;
    m["schema"] = kControllerSchema;
    m["n"] = cs.n;
    m["microgrids"] = names;
    m["structure"] = to_string(cs.structure);
    m["gamma"] = cs.gamma;
    m["margin"] = cs.margin;
    m["topology"] = cs.topology;
    m["modes"] = json::array();
    for (const auto& md : cs.modes) m["modes"].push_back(md.sigma.str());
    open_out(dir / "manifest.json") << m.dump(2) << "\n";
    write_matrix_csv(dir / "P.csv", cs.P);
    auto g = open_out(dir / "gains.csv");
    g << "sigma,matrix,row,col,value\n";
    for (const auto& md : cs.modes) write_long(g, md.sigma.str(), "K", md.K);
    auto c = open_out(dir / "certificates.csv");
    c << "sigma,matrix,row,col,value\n";
    for (const auto& md : cs.modes) {
        write_long(c, md.sigma.str(), "V", md.V);
        write_long(c, md.sigma.str(), "S", md.S);
        write_long(c, md.sigma.str(), "R", md.R);
        write_long(c, md.sigma.str(), "Q", md.Q);
    }
}

inline ControllerSet load_controllers(const fs::path& dir) {
    const json m = read_json(dir / "manifest.json");
    expect_schema(m, kControllerSchema, dir / "manifest.json");
    const std::string where = (dir / "manifest.json").string();
    ControllerSet cs;
    cs.n = get<int>(m, "n", where);
    const auto st = get<std::string>(m, "structure", where);
    cs.structure = st == "centralized" ? Structure::centralized : Structure::distributed;
    cs.gamma = get<double>(m, "gamma", where);
    cs.margin = get<double>(m, "margin", where);
    cs.topology = get_or<std::string>(m, "topology", "nominal", where);
    cs.P = read_matrix_csv(dir / "P.csv");
    const int n = cs.n;
    if (cs.P.rows() != 3 * n || cs.P.cols() != 3 * n) throw ParseError(where + ": P has wrong size");
    const auto sig = get<std::vector<std::string>>(m, "modes", where);
    if (sig.size() != (std::size_t{1} << n)) throw ParseError(where + ": expected 2^n modes");
    cs.modes.resize(sig.size());
    for (std::size_t k = 0; k < sig.size(); ++k) {
        SwitchingVector s;
        try {
            s = SwitchingVector::parse(sig[k]);
        } catch (const ModelError& e) {
            throw ParseError(where + ": " + e.what());
        }
        if (s.size() != n || s.index() != k) throw ParseError(where + ": modes out of order");
        auto& md = cs.modes[k];
        md.sigma = s;
        md.K = md.V = md.Q = md.S = md.R = Mat::Zero(2 * n, 2 * n);
    }
    auto fill = [&](const fs::path& file, const std::set<std::string>& allowed) {
        const auto t = read_csv(file);
        if (t.header != std::vector<std::string>{"sigma", "matrix", "row", "col", "value"})
            throw ParseError(file.string() + ": unexpected header");
        for (const auto& r : t.rows) {
            SwitchingVector s;
            try {
                s = SwitchingVector::parse(r[0]);
            } catch (const ModelError& e) {
                throw ParseError(file.string() + ": " + e.what());
            }
            if (s.size() != n) throw ParseError(file.string() + ": sigma of wrong length");
            if (!allowed.count(r[1])) throw ParseError(file.string() + ": unknown matrix '" + r[1] + "'");
            const int i = static_cast<int>(parse_double(r[2], file.string()));
            const int c = static_cast<int>(parse_double(r[3], file.string()));
            if (i < 0 || c < 0 || i >= 2 * n || c >= 2 * n) throw ParseError(file.string() + ": index out of range");
            auto& md = cs.modes[s.index()];
            Mat& target = r[1] == "K" ? md.K : r[1] == "V" ? md.V : r[1] == "S" ? md.S : r[1] == "R" ? md.R : md.Q;
            target(i, c) = parse_double(r[4], file.string());
        }
    };
    fill(dir / "gains.csv", {"K"});
    fill(dir / "certificates.csv", {"V", "S", "R", "Q"});
    for (auto& md : cs.modes) md.U = md.V * md.K;
    return cs;
}

// ---------------------------------------------------------------- trajectories

inline void write_trajectory(const fs::path& path, const Trajectory& tr,
                             const std::vector<std::string>& names) {
    auto out = open_out(path);
    const int n = tr.n;
    out << "t,sigma,topology";
    auto cols = [&](const char* a, const char* b, const char* c) {
        for (int i = 0; i < n; ++i) {
            out << "," << a << "_" << names[i] << "," << b << "_" << names[i];
            if (c) out << "," << c << "_" << names[i];
        }
    };
    cols("d_delta", "d_omega", "d_V");
    cols("y_rate", "y_V", nullptr);
    cols("u_P", "u_Q", nullptr);
    cols("ut_P", "ut_Q", nullptr);
    cols("w_P", "w_Q", nullptr);
    out << "\n";
    for (std::size_t k = 0; k < tr.size(); ++k) {
        out << fmt(tr.t[k]) << "," << SwitchingVector(n, tr.sigma[k]).str() << "," << tr.topology[k];
        for (const Vec* v : {&tr.x[k], &tr.y[k], &tr.u[k], &tr.ut[k], &tr.w[k]})
            for (Eigen::Index i = 0; i < v->size(); ++i) out << "," << fmt((*v)(i));
        out << "\n";
    }
}

inline void write_dissipation(const fs::path& path, const DissipationReport& r) {
    auto out = open_out(path);
    out << "t,supply,storage_rate,margin,in_neighborhood\n";
    for (std::size_t k = 0; k < r.t.size(); ++k)
        out << fmt(r.t[k]) << "," << fmt(r.supply[k]) << "," << fmt(r.storage_rate[k]) << ","
            << fmt(r.margin[k]) << "," << int(r.inside[k]) << "\n";
}

}  // namespace mafd::io
