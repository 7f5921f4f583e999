#include "support.hpp"

#include <gtest/gtest.h>

using namespace mafd;

namespace {

Plant decoupled(int n, MicrogridDroop c, OmegaPropagation prop = OmegaPropagation::literal) {
    std::vector<std::string> names;
    for (int i = 0; i < n; ++i) names.push_back("m" + std::to_string(i));
    AdmittanceGraph g(names, {});
    OperatingPoint op;
    op.names = names;
    op.V = Vec::Ones(n);
    op.delta = op.P_inj = op.Q_inj = op.P_load = op.Q_load = Vec::Zero(n);
    DroopParams p;
    p.omega_propagation = prop;
    p.mg.assign(n, c);
    return Plant(g, op, p);
}

Plant random_plant(int n, std::uint64_t seed, OmegaPropagation prop) {
    std::mt19937_64 rng(seed);
    auto rn = test::random_network(n, rng);
    return Plant(rn.graph, rn.op, test::random_droop(n, rng, prop));
}

}  // namespace

TEST(Coupling, ZeroDeviationGivesZero) {
    const auto p = random_plant(3, 1, OmegaPropagation::literal);
    EXPECT_LT(coupling_h(p, Vec::Zero(9)).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Coupling, ZeroAdmittanceGivesZero) {
    const auto p = decoupled(3, {});
    Vec x = Vec::LinSpaced(9, -0.1, 0.1);
    EXPECT_EQ(coupling_h(p, x).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Coupling, MatchesOracleForSmallDeviations) {
    const auto p = random_plant(3, 2, OmegaPropagation::literal);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-0.02, 0.02);
    for (int trial = 0; trial < 20; ++trial) {
        Vec x(9);
        for (int k = 0; k < 9; ++k) x(k) = u(rng);
        const Vec h = coupling_h(p, x);
        const auto o = test::oracle_injections(p.graph(), p.absolute_V(x), p.absolute_delta(x));
        for (int i = 0; i < 3; ++i) {
            EXPECT_NEAR(h(2 * i), o.P(i) - p.op().P_inj(i), 1e-12);
            EXPECT_NEAR(h(2 * i + 1), o.Q(i) - p.op().Q_inj(i), 1e-12);
        }
    }
}

TEST(AngleMode, EquilibriumIsStationary) {
    const auto p = random_plant(3, 3, OmegaPropagation::literal);
    const Vec x = Vec::Zero(9), w = Vec::Zero(6);
    const Vec f = assemble_f(p, SwitchingVector::all(3, Mode::angle), x, coupling_h(p, x), w);
    EXPECT_LT(f.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(AngleMode, DecoupledSubstitution) {
    MicrogridDroop c;
    c.J_delta = 1, c.D_delta = 2;
    const auto p = decoupled(1, c);
    Vec x = Vec::Zero(3);
    x(0) = 0.1;
    const Vec f = assemble_f(p, SwitchingVector::all(1, Mode::angle), x, Vec::Zero(2), Vec::Zero(2));
    EXPECT_DOUBLE_EQ(f(0), -0.2);
    EXPECT_DOUBLE_EQ(f(1), 0.4);
    EXPECT_DOUBLE_EQ(f(2), 0.0);
}

TEST(AngleMode, OmegaIsTimeDerivativeOfAngleRate) {
    // Literal propagation: omega-dot is d/dt of delta-dot along any trajectory.
    // The central-difference error must shrink as O(h^2).
    const auto p = std::make_shared<const Plant>(random_plant(2, 5, OmegaPropagation::literal));
    SimContext ctx;
    ctx.plants["nominal"] = p;
    auto worst_at = [&](double h) {
        ScenarioSpec s;
        s.horizon = 0.5;
        s.controller = ControllerKind::none;
        s.integrator.output_interval = h;
        s.x0 = Vec::Zero(6);
        s.x0(0) = 0.03, s.x0(2) = -0.01, s.x0(5) = 0.02;
        const auto tr = run_scenario(s, ctx, nullptr);
        double worst = 0.0;
        for (std::size_t k = 1; k + 1 < tr.size(); ++k)
            for (int i = 0; i < 2; ++i) {
                const double fd =
                    (tr.xdot[k + 1](3 * i) - tr.xdot[k - 1](3 * i)) / (tr.t[k + 1] - tr.t[k - 1]);
                worst = std::max(worst, std::abs(fd - tr.xdot[k](3 * i + 1)));
            }
        return worst;
    };
    const double e1 = worst_at(2e-3), e2 = worst_at(1e-3);
    EXPECT_LT(e2, 1e-4);
    EXPECT_GT(e1 / e2, 3.5);
    EXPECT_LT(e1 / e2, 4.5);
}

TEST(FrequencyMode, Substitution) {
    const auto p = decoupled(1, {});
    Vec x = Vec::Zero(3);
    x(1) = 0.1;
    const Vec f = assemble_f(p, SwitchingVector::all(1, Mode::frequency), x, Vec::Zero(2), Vec::Zero(2));
    EXPECT_DOUBLE_EQ(f(0), 0.1);
    EXPECT_DOUBLE_EQ(f(1), -0.1);
    EXPECT_DOUBLE_EQ(f(2), 0.0);
}

TEST(FrequencyMode, StepDisturbance) {
    MicrogridDroop c;
    c.J_omega = 2;
    const auto p = decoupled(1, c);
    Vec w = Vec::Zero(2);
    w(0) = 0.2;
    const Vec f = assemble_f(p, SwitchingVector::all(1, Mode::frequency), Vec::Zero(3), Vec::Zero(2), w);
    EXPECT_DOUBLE_EQ(f(1), 0.1);
}

TEST(FrequencyMode, EquilibriumIsStationary) {
    const auto p = random_plant(3, 6, OmegaPropagation::propagated);
    const Vec f = assemble_f(p, SwitchingVector::all(3, Mode::frequency), Vec::Zero(9),
                             coupling_h(p, Vec::Zero(9)), Vec::Zero(6));
    EXPECT_LT(f.cwiseAbs().maxCoeff(), 1e-8);
}

TEST(StackedField, EveryModeMatchesOracle) {
    for (auto prop : {OmegaPropagation::literal, OmegaPropagation::propagated}) {
        const auto p = random_plant(3, 8, prop);
        std::mt19937_64 rng(9);
        std::uniform_real_distribution<double> u(-0.02, 0.02);
        for (std::uint32_t j = 0; j < 8; ++j) {
            const SwitchingVector s(3, j);
            Vec x(9), w(6);
            for (int k = 0; k < 9; ++k) x(k) = u(rng);
            for (int k = 0; k < 6; ++k) w(k) = u(rng);
            const Vec f = assemble_f(p, s, x, coupling_h(p, x), w);
            const Vec o = test::oracle_field(p, s, x, w);
            EXPECT_LT((f - o).cwiseAbs().maxCoeff(), 1e-7) << s.str();
        }
    }
}

TEST(StackedField, MixedModeRowsEqualSingleModeRows) {
    // Rows of a frequency-mode microgrid do not depend on the others' modes.
    const auto p = random_plant(2, 10, OmegaPropagation::literal);
    const Vec x = Vec::Constant(6, 0.01), w = Vec::Constant(4, 0.05);
    const Vec u = coupling_h(p, x);
    const Vec mixed = assemble_f(p, SwitchingVector::parse("21"), x, u, w);
    const Vec all2 = assemble_f(p, SwitchingVector::parse("22"), x, u, w);
    EXPECT_EQ(mixed.segment<3>(0), all2.segment<3>(0));
    EXPECT_DOUBLE_EQ(mixed(5), all2(5));
}

TEST(StackedField, RejectsBadDimensions) {
    const auto p = decoupled(2, {});
    EXPECT_THROW(assemble_f(p, SwitchingVector::all(2, Mode::angle), Vec::Zero(5), Vec::Zero(4),
                            Vec::Zero(4)),
                 ModelError);
    EXPECT_THROW(assemble_f(p, SwitchingVector::all(3, Mode::angle), Vec::Zero(6), Vec::Zero(4),
                            Vec::Zero(4)),
                 ModelError);
}

TEST(Output, ZeroAtEquilibrium) {
    const auto p = random_plant(3, 11, OmegaPropagation::literal);
    for (std::uint32_t j = 0; j < 8; ++j)
        EXPECT_LT(output_g(p, SwitchingVector(3, j), Vec::Zero(9), Vec::Zero(6)).cwiseAbs().maxCoeff(),
                  1e-8);
}

TEST(Output, FrequencyModeDecoupled) {
    const auto p = decoupled(1, {});
    Vec x = Vec::Zero(3);
    x(1) = 0.1;
    const Vec y = output_g(p, SwitchingVector::all(1, Mode::frequency), x, Vec::Zero(2));
    EXPECT_DOUBLE_EQ(y(0), -0.1);
    EXPECT_DOUBLE_EQ(y(1), 0.0);
}

TEST(Output, MixedModeMatchesOracle) {
    const auto p = random_plant(2, 12, OmegaPropagation::propagated);
    Vec x(6);
    x << 0.01, -0.02, 0.005, -0.01, 0.03, 0.002;
    Vec w(4);
    w << 0.1, 0.0, -0.05, 0.02;
    const auto s = SwitchingVector::parse("12");
    const Vec y = output_g(p, s, x, w);
    const Vec f = test::oracle_field(p, s, x, w);
    EXPECT_NEAR(y(0), f(0), 1e-9);  // delta-dot for the angle-mode microgrid
    EXPECT_NEAR(y(2), f(4), 1e-9);  // omega-dot for the frequency-mode one
    EXPECT_DOUBLE_EQ(y(1), x(2));
    EXPECT_DOUBLE_EQ(y(3), x(5));
}

TEST(SwitchingVectorType, ParseAndFormat) {
    const auto s = SwitchingVector::parse("12211");
    EXPECT_EQ(s.size(), 5);
    EXPECT_EQ(s.str(), "12211");
    EXPECT_EQ(s[1], Mode::frequency);
    EXPECT_EQ(s.index(), 0b00110u);
    EXPECT_THROW(SwitchingVector::parse("1231"), ParseError);
    EXPECT_THROW(SwitchingVector(2, 4u), ModelError);
}

TEST(DroopParamsValidation, RejectsNonPositive) {
    DroopParams p;
    p.mg.assign(1, {});
    p.mg[0].D_V = 0;
    EXPECT_THROW(p.validate(1), ModelError);
    p.mg[0].D_V = 1;
    EXPECT_THROW(p.validate(2), ModelError);
}
