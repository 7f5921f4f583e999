#include "support.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <fstream>
#include <sstream>

using namespace mafd;
namespace fs = std::filesystem;

namespace {

fs::path work(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("mafd_cli_" + std::to_string(::getpid())) / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string cfg(const std::string& name) { return test::config(name).string(); }

int run(const std::string& args) {
    const std::string cmd = std::string(MAFD_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int st = std::system(cmd.c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string read_text(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string ring_args() { return "--network " + cfg("ring3.json") + " --droop " + cfg("droop_ring3.json"); }

}  // namespace

TEST(Cli, UsageErrors) {
    EXPECT_EQ(run(""), 1);
    EXPECT_EQ(run("frobnicate"), 1);
    EXPECT_EQ(run("powerflow"), 1);
    EXPECT_EQ(run("linearize --network " + cfg("ring3.json")), 1);
    EXPECT_EQ(run("powerflow --network /nonexistent.json"), 1);
    EXPECT_EQ(run("synthesize " + ring_args() + " --structure mesh --out " + work("u").string()), 1);
    EXPECT_EQ(run("--help"), 0);
}

TEST(Cli, ParseErrors) {
    const auto d = work("parse");
    write_text(d / "bad.json", "{\"schema\": \"mafd-network/1\", \"buses\": [");
    EXPECT_EQ(run("powerflow --network " + (d / "bad.json").string() + " --out " + d.string()), 2);
    write_text(d / "droop.json", R"({"schema": "mafd-droop/1", "default": {"D_V": -1}})");
    EXPECT_EQ(run("linearize --network " + cfg("ring3.json") + " --droop " + (d / "droop.json").string() +
                  " --out " + d.string()),
              2);
}

TEST(Cli, InfeasibleDesign) {
    const auto d = work("infeasible");
    write_text(d / "droop.json",
               R"({"schema": "mafd-droop/1", "omega_propagation": "literal", "default": {"angle_leakage": 0}})");
    EXPECT_EQ(run("synthesize --network " + cfg("two_bus.json") + " --droop " + (d / "droop.json").string() +
                  " --out " + d.string()),
              3);
    EXPECT_FALSE(fs::exists(d / "manifest.json"));
}

TEST(Cli, NonConvergentPowerFlow) {
    const auto d = work("nonconv");
    write_text(d / "net.json", R"({"schema": "mafd-network/1", "buses": ["a", "b"], "slack": "a",
        "lines": [{"from": "a", "to": "b", "r": 0.01, "x": 0.2}],
        "conditions": [{"name": "c", "buses": {"b": {"P_inj": -40.0}}}]})");
    EXPECT_EQ(run("powerflow --network " + (d / "net.json").string() + " --out " + d.string()), 4);
}

TEST(Cli, MissingTopologyIsRuntimeFailure) {
    const auto d = work("runtime");
    write_text(d / "scn.json", R"({"schema": "mafd-scenario/1", "horizon": 1.0, "controller": "none",
        "topology": {"initial_open": ["SW2", "SW3"]}})");
    EXPECT_EQ(run("simulate --network " + cfg("five_microgrid.json") + " --droop " + cfg("droop_five.json") +
                  " --scenario " + (d / "scn.json").string() + " --no-plots --out " + d.string()),
              5);
}

TEST(Cli, TwoBusPowerFlow) {
    const auto d = work("pf");
    ASSERT_EQ(run("powerflow --network " + cfg("two_bus.json") + " --out " + d.string()), 0);
    const auto ops = io::read_operating_points(d / "operating_points.csv");
    ASSERT_EQ(ops.size(), 1u);
    ASSERT_EQ(ops[0].size(), 2);
    EXPECT_NEAR(ops[0].P_inj(1), -0.3, 1e-8);
    EXPECT_NEAR(ops[0].Q_inj(1), -0.1, 1e-8);
    const auto inj = test::oracle_injections(io::load_network(cfg("two_bus.json")).graph, ops[0].V, ops[0].delta);
    EXPECT_NEAR(inj.P(1), -0.3, 1e-8);
    EXPECT_NEAR(inj.P(0) + inj.P(1), (ops[0].P_inj(0) + ops[0].P_inj(1)), 1e-10);
}

TEST(Cli, LinearizeWritesEveryMode) {
    const auto d = work("lin");
    ASSERT_EQ(run("linearize " + ring_args() + " --out " + d.string()), 0);
    const auto t = io::read_csv(d / "linearization_check.csv");
    ASSERT_EQ(t.rows.size(), 8u);
    for (const auto& r : t.rows) EXPECT_LE(io::parse_double(r[1], "t"), 1e-6) << r[0];
    EXPECT_EQ(io::read_matrix_csv(d / "H.csv").rows(), 6);
}

TEST(Cli, SynthesizeVerifyAndTamper) {
    const auto d = work("synth");
    ASSERT_EQ(run("synthesize " + ring_args() + " --out " + d.string()), 0);
    const auto cs = io::load_controllers(d);
    EXPECT_EQ(cs.modes.size(), 8u);
    const auto v = work("verify");
    ASSERT_EQ(run("verify " + ring_args() + " --controllers " + d.string() + " --out " + v.string()), 0);
    EXPECT_NE(read_text(v / "verify_report.txt").find("verdict PASS"), std::string::npos);

    // Scale every gain well outside the certified range.
    const auto t = io::read_csv(d / "gains.csv");
    std::string s = "sigma,matrix,row,col,value\n";
    for (const auto& r : t.rows)
        s += r[0] + "," + r[1] + "," + r[2] + "," + r[3] + "," + io::fmt(-50.0 * io::parse_double(r[4], "t")) + "\n";
    write_text(d / "gains.csv", s);
    EXPECT_EQ(run("verify " + ring_args() + " --controllers " + d.string() + " --out " + v.string()), 3);
}

TEST(Cli, RobustSynthesisAndVerify) {
    const auto d = work("robust");
    ASSERT_EQ(run("synthesize " + ring_args() + " --robust --out " + d.string()), 0);
    EXPECT_EQ(io::read_csv(d / "gamma.csv").rows.size(), 1u);
    EXPECT_GT(io::load_controllers(d).gamma, 0.0);
    EXPECT_EQ(run("verify " + ring_args() + " --robust --controllers " + d.string() + " --out " + d.string()), 0);
}

TEST(Cli, SeededVerifyIsDeterministic) {
    const auto d = work("seed");
    ASSERT_EQ(run("synthesize " + ring_args() + " --out " + d.string()), 0);
    const auto a = work("seed_a"), b = work("seed_b"), c = work("seed_c");
    const std::string base = "verify " + ring_args() + " --controllers " + d.string();
    ASSERT_EQ(run(base + " --seed 42 --out " + a.string()), 0);
    ASSERT_EQ(run(base + " --seed 42 --out " + b.string()), 0);
    ASSERT_EQ(run(base + " --seed 43 --out " + c.string()), 0);
    EXPECT_EQ(read_text(a / "l2_gain.csv"), read_text(b / "l2_gain.csv"));
    EXPECT_EQ(read_text(a / "verify_report.txt"), read_text(b / "verify_report.txt"));
    EXPECT_NE(read_text(a / "l2_gain.csv"), read_text(c / "l2_gain.csv"));
}

TEST(Cli, SingleMicrogridBundleHasTwoGains) {
    const auto d = work("single");
    write_text(d / "net.json", R"({"schema": "mafd-network/1", "buses": ["m"], "slack": "m", "lines": [],
        "conditions": [{"name": "c", "buses": {"m": {"V": 1.0}}}]})");
    write_text(d / "droop.json",
               R"({"schema": "mafd-droop/1", "omega_propagation": "propagated", "default": {"angle_leakage": 1}})");
    ASSERT_EQ(run("synthesize --network " + (d / "net.json").string() + " --droop " + (d / "droop.json").string() +
                  " --out " + d.string()),
              0);
    EXPECT_EQ(io::load_controllers(d).modes.size(), 2u);
}

TEST(Cli, FiveMicrogridBundleAndSimulation) {
    const auto d = work("five");
    const std::string args = "--network " + cfg("five_microgrid.json") + " --droop " + cfg("droop_five.json");
    ASSERT_EQ(run("synthesize " + args + " --out " + d.string()), 0);
    const auto cs = io::load_controllers(d);
    EXPECT_EQ(cs.modes.size(), 32u);
    const auto s = work("five_sim");
    write_text(s / "scn.json", R"({"schema": "mafd-scenario/1", "horizon": 4.0, "output_interval": 0.01,
        "compare": ["C1", "C3"], "loss": [{"microgrid": "mG3", "start": 0.5, "end": 4.0}],
        "disturbances": [{"microgrid": "mG3", "start": 1.0, "end": 2.0, "amplitude": 0.1}]})");
    ASSERT_EQ(run("simulate " + args + " --scenario " + (s / "scn.json").string() + " --controllers " + d.string() +
                  " --out " + s.string()),
              0);
    const auto sum = io::read_csv(s / "summary.csv");
    ASSERT_EQ(sum.rows.size(), 2u);
    EXPECT_EQ(sum.rows[0][0], "C1");
    EXPECT_LT(io::parse_double(sum.rows[0][1], "t"), io::parse_double(sum.rows[1][1], "t"));
    EXPECT_EQ(io::read_csv(s / "trajectory_C1.csv").rows.size(), 401u);
    EXPECT_TRUE(fs::exists(s / "dissipation_C1.csv"));
}
