#include "support.hpp"

#include <gtest/gtest.h>

using namespace mafd;

namespace {

std::shared_ptr<const Plant> single(double kappa, OmegaPropagation prop = OmegaPropagation::propagated) {
    AdmittanceGraph g({"m"}, {});
    OperatingPoint op;
    op.names = {"m"};
    op.V = Vec::Ones(1);
    op.delta = op.P_inj = op.Q_inj = op.P_load = op.Q_load = Vec::Zero(1);
    DroopParams p;
    p.omega_propagation = prop;
    MicrogridDroop c;
    c.angle_leakage = kappa;
    p.mg = {c};
    return std::make_shared<const Plant>(g, op, p);
}

struct Ring {
    System sys;
    ControllerSet cs;
};

const Ring& ring() {
    static const Ring r = [] {
        Ring x{test::ring3(), {}};
        x.cs = synthesize(*x.sys.model, x.sys.droop.synthesis);
        return x;
    }();
    return r;
}

double brute_gamma(const SwitchedModel& m, const Mat& H_new) {
    double g = 0.0;
    for (const auto& mm : m.modes) {
        Eigen::JacobiSVD<Mat> svd(mm.B1 * (m.H - H_new));
        g = std::max(g, svd.singularValues()(0));
    }
    return g;
}

}  // namespace

TEST(Synthesis, EmptySystem) {
    SwitchedModel m;
    const auto cs = synthesize(m);
    EXPECT_EQ(cs.n, 0);
    EXPECT_EQ(cs.P.size(), 0);
    EXPECT_TRUE(cs.modes.empty());
}

TEST(Synthesis, DesignMatrixDimensions) {
    const auto m = build_switched_model(single(1.0));
    const auto& mm = m.modes[0];
    const Mat M = lmi_matrix(mm, m.H, Mat::Identity(3, 3), Mat::Zero(2, 2), Mat::Zero(2, 2),
                             Mat::Identity(2, 2), 0.1 * Mat::Identity(2, 2));
    EXPECT_EQ(M.rows(), 7);
    EXPECT_EQ(M.cols(), 7);
    EXPECT_EQ(M, M.transpose());
}

TEST(Synthesis, SingleStableMicrogrid) {
    const auto m = build_switched_model(single(1.0));
    const auto cs = synthesize(m);
    ASSERT_EQ(cs.modes.size(), 2u);
    for (const auto& c : cs.modes) {
        EXPECT_EQ(c.K.rows(), 2);
        EXPECT_EQ(c.K.cols(), 2);
        EXPECT_EQ(c.Q, Mat(-0.01 * Mat::Identity(2, 2)));
    }
    EXPECT_TRUE(verify_feasibility(cs, m).passed());
}

TEST(Synthesis, RingCertificatesHoldUnderIndependentCheck) {
    const auto& r = ring();
    const auto& m = *r.sys.model;
    ASSERT_EQ(r.cs.modes.size(), 8u);
    EXPECT_TRUE(test::cholesky_pd(r.cs.P, 0.0));
    const auto pattern = SparsityPattern::from_graph(r.sys.net.graph);
    for (int j = 0; j < 8; ++j) {
        const auto& mm = m.modes[j];
        const auto& c = r.cs.modes[j];
        const Mat M = lmi_matrix(mm, m.H, r.cs.P, c.V * c.K, c.S, c.R, sqrt_neg(c.Q));
        EXPECT_TRUE(test::cholesky_pd(M, 1e-6)) << mm.sigma.str();
        EXPECT_LE((r.cs.P * mm.B1 - mm.B1 * c.V).cwiseAbs().maxCoeff(), 1e-6);
        EXPECT_TRUE(pattern.conforms(c.K));
        EXPECT_LE(c.K.cwiseAbs().maxCoeff(), r.sys.droop.synthesis.k_max + 1e-9);
    }
    EXPECT_TRUE(verify_feasibility(r.cs, m).passed());
}

TEST(Synthesis, RankDeficientInputMatrixRejected) {
    auto m = build_switched_model(single(1.0));
    m.modes[1].B1.col(1).setZero();
    EXPECT_THROW(synthesize(m), RankError);
}

TEST(Synthesis, UnobservableEquilibriumDirectionIsInfeasible) {
    // Literal propagation without leakage leaves a marginal angle direction.
    const auto m = build_switched_model(single(0.0, OmegaPropagation::literal));
    EXPECT_FALSE(structurally_infeasible_modes(m).empty());
    EXPECT_THROW(synthesize(m), InfeasibleError);
}

TEST(Synthesis, NegativeGammaRejected) {
    const auto m = build_switched_model(single(1.0));
    EXPECT_THROW(synthesize(m, {}, -0.1), ModelError);
}

TEST(Synthesis, CentralizedMarginNotWorseThanDistributed) {
    const auto& r = ring();
    auto o = r.sys.droop.synthesis;
    o.structure = Structure::centralized;
    const auto c2 = synthesize(*r.sys.model, o);
    EXPECT_GE(c2.margin, r.cs.margin - 1e-6);
}

TEST(Robust, ZeroPerturbationReducesToNominal) {
    const auto& r = ring();
    const auto rob = synthesize_robust(*r.sys.model, r.sys.model->H, r.sys.droop.synthesis);
    EXPECT_EQ(rob.gamma, 0.0);
    EXPECT_EQ(rob.P, r.cs.P);
    for (std::size_t j = 0; j < rob.modes.size(); ++j) EXPECT_EQ(rob.modes[j].K, r.cs.modes[j].K);
}

TEST(Robust, LineRemovalDesignHoldsOnBothModels) {
    const auto& r = ring();
    const auto& m = *r.sys.model;
    const auto gs = worst_case_gamma(m, {"SWbc"}, r.sys.net.slack);
    ASSERT_EQ(gs.argmax, "SWbc");
    const auto rob = synthesize(m, r.sys.droop.synthesis, gs.gamma);
    // robust matrix on the design topology
    EXPECT_TRUE(verify_feasibility(rob, m, gs.gamma).passed());
    // nominal matrix on the perturbed topology
    const auto& c = gs.contingencies.front();
    const auto g2 = r.sys.net.graph.with_switch("SWbc", false);
    const auto m2 = build_switched_model(std::make_shared<const Plant>(g2, *c.op, r.sys.droop.params));
    const auto pattern = SparsityPattern::from_graph(r.sys.net.graph);
    EXPECT_TRUE(verify_feasibility(rob, m2, 0.0, 1e-6, &pattern).passed());

    // A milder perturbation (half the Jacobian change) also passes.
    SwitchedModel half = m;
    half.H = m.H + 0.5 * (c.H_new - m.H);
    EXPECT_LT(brute_gamma(m, half.H), gs.gamma);
    EXPECT_TRUE(verify_feasibility(rob, half, 0.0).passed());
}

TEST(Robust, PerturbationIdentity) {
    const auto& r = ring();
    const auto& m = *r.sys.model;
    const auto gs = worst_case_gamma(m, {"SWbc"}, r.sys.net.slack);
    const auto rob = synthesize(m, r.sys.droop.synthesis, gs.gamma);
    for (const auto& pc : perturbation_structure_check(rob, m, gs.contingencies[0].H_new, gs.gamma))
        EXPECT_LE(pc.structure_error, 1e-10) << pc.sigma.str();
}

TEST(WorstCase, EmptyAndSingle) {
    const auto& r = ring();
    const auto& m = *r.sys.model;
    const auto none = worst_case_gamma(m, {}, r.sys.net.slack);
    EXPECT_EQ(none.gamma, 0.0);
    EXPECT_TRUE(none.argmax.empty());
    const auto one = worst_case_gamma(m, {"SWbc"}, r.sys.net.slack);
    EXPECT_NEAR(one.gamma, brute_gamma(m, one.contingencies[0].H_new), 1e-12);
}

TEST(WorstCase, FiveMicrogridArgmaxMatchesBruteForce) {
    const auto s = test::five();
    const auto gs = worst_case_gamma(*s.model, s.net.contingencies, s.net.slack);
    ASSERT_EQ(gs.contingencies.size(), 3u);
    std::string best;
    double bg = -1;
    for (const auto& name : s.net.contingencies) {
        const auto g2 = s.net.graph.with_switch(name, false);
        const auto op2 = solve_operating_point(g2, targets_from(s.plant->op(), s.net.slack));
        const double g = brute_gamma(*s.model, jacobian_H(g2, op2));
        if (g > bg) bg = g, best = name;
    }
    EXPECT_EQ(gs.argmax, best);
    EXPECT_NEAR(gs.gamma, bg, 1e-12);
}

TEST(Certificate, HandBuiltIdentityScaledInstance) {
    const auto m = build_switched_model(single(1.0));
    ControllerSet cs;
    cs.n = 1;
    cs.P = Mat::Identity(3, 3);
    for (const auto& mm : m.modes) {
        ModeCertificate c;
        c.sigma = mm.sigma;
        c.K = Mat::Zero(2, 2);
        c.V = Mat::Identity(2, 2);
        c.U = Mat::Zero(2, 2);
        c.S = Mat::Zero(2, 2);
        c.R = 10.0 * Mat::Identity(2, 2);
        c.Q = -0.01 * Mat::Identity(2, 2);
        cs.modes.push_back(c);
    }
    const auto rep = verify_feasibility(cs, m);
    for (const auto& mr : rep.modes) {
        EXPECT_GT(mr.min_eig_M, 0.0) << mr.sigma.str();
        EXPECT_GT(mr.min_eig_dissipation, 0.0);
        EXPECT_EQ(mr.equality_residual, 0.0);
    }
    EXPECT_TRUE(rep.passed());
}

TEST(Certificate, TamperedGainBlock) {
    const auto& r = ring();
    auto cs = r.cs;
    // Zero one allowed block in every mode; the pattern still conforms.
    for (auto& c : cs.modes) c.K.block(0, 0, 2, 2).setZero();
    const auto rep = verify_feasibility(cs, *r.sys.model);
    EXPECT_TRUE(rep.sparsity_ok());
    EXPECT_FALSE(rep.passed()) << rep.str();
}

TEST(Certificate, OutOfPatternGainDetected) {
    const auto s = test::five();
    const auto pattern = SparsityPattern::from_graph(s.net.graph);
    ASSERT_FALSE(pattern.allowed(0, 2));
    Mat K = Mat::Zero(10, 10);
    EXPECT_TRUE(pattern.conforms(K));
    K(0, 4) = 1e-3;
    EXPECT_FALSE(pattern.conforms(K));
}

TEST(Certificate, ScalingPreservesCertificate) {
    const auto& r = ring();
    const auto& m = *r.sys.model;
    const double c = 3.0;
    for (int j = 0; j < 8; ++j) {
        const auto& mc = r.cs.modes[j];
        const Mat G = dissipation_matrix(m.modes[j], m.H, mc.K, r.cs.P, mc.S, mc.R, mc.Q);
        const Mat Gs = dissipation_matrix(m.modes[j], m.H, mc.K, c * r.cs.P, c * mc.S, c * mc.R, c * mc.Q);
        EXPECT_LE((Gs - c * G).cwiseAbs().maxCoeff(), 1e-9 * G.cwiseAbs().maxCoeff());
        const Mat Ms = lmi_matrix(m.modes[j], m.H, c * r.cs.P, c * mc.V * mc.K, c * mc.S, c * mc.R,
                                  sqrt_neg(c * mc.Q));
        EXPECT_GT(min_eigenvalue(Ms), 0.0);
    }
}

TEST(Certificate, NominalFeasibilityFollowsFromRobust) {
    // M(gamma = 0) - M(gamma) = 2 gamma P >= 0.
    const auto& r = ring();
    const auto& m = *r.sys.model;
    const auto rob = synthesize(m, r.sys.droop.synthesis, 0.5);
    EXPECT_TRUE(verify_feasibility(rob, m, 0.5).passed());
    EXPECT_TRUE(verify_feasibility(rob, m, 0.0).passed());
    EXPECT_GE(verify_feasibility(rob, m, 0.0).worst_M(), verify_feasibility(rob, m, 0.5).worst_M());
}
