#include "mafd/sdp.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace mafd;

namespace {

sdp::SymSparse identity(int n, double s = 1.0) {
    sdp::SymSparse a;
    for (int i = 0; i < n; ++i) a.add(i, i, s);
    return a;
}

Mat random_sym(int n, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Mat a(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) a(i, j) = g(rng);
    return symmetrize(a);
}

}  // namespace

TEST(Sdp, SmallestEigenvalueAsSdp) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 5; ++trial) {
        const Mat C = random_sym(4, rng);
        sdp::Problem p;
        const int t = p.add_var(-1, 1.0);
        sdp::Block b;
        b.dim = 4;
        b.C = C;
        b.terms.push_back({t, identity(4)});
        p.blocks.push_back(b);
        const auto r = sdp::solve(p);
        ASSERT_EQ(r.status, sdp::Status::optimal);
        EXPECT_NEAR(r.y(t), Eigen::SelfAdjointEigenSolver<Mat>(C).eigenvalues()(0), 1e-6);
    }
}

TEST(Sdp, LinearProgramBlock) {
    // max y1 + y2  s.t.  y1 <= 1, y2 <= 2, y1 + y2 <= 2.5
    sdp::Problem p;
    const int a = p.add_var(-1, 1.0), b = p.add_var(-1, 1.0);
    sdp::Block lp;
    lp.dim = 3;
    lp.lp = true;
    lp.C = Vec(3);
    lp.C << 1, 2, 2.5;
    sdp::SymSparse ca, cb;
    ca.add(0, 0, 1), ca.add(2, 2, 1);
    cb.add(1, 1, 1), cb.add(2, 2, 1);
    lp.terms = {{a, ca}, {b, cb}};
    p.blocks.push_back(lp);
    const auto r = sdp::solve(p);
    ASSERT_EQ(r.status, sdp::Status::optimal);
    EXPECT_NEAR(r.y(a) + r.y(b), 2.5, 1e-7);
}

TEST(Sdp, LocalGroupsWithSharedVariable) {
    // Blocks C_l - a_l I - s I >= 0 with local a_l and shared |s| <= 1:
    // optimum of a_0 + a_1 is lmin(C_0) + lmin(C_1) + 2 at s = -1.
    std::mt19937_64 rng(2);
    const Mat C0 = random_sym(3, rng), C1 = random_sym(3, rng);
    sdp::Problem p;
    const int s = p.add_var(-1, 0.0);
    const int a0 = p.add_var(0, 1.0), a1 = p.add_var(1, 1.0);
    for (auto [C, a] : {std::pair<const Mat*, int>{&C0, a0}, {&C1, a1}}) {
        sdp::Block b;
        b.dim = 3;
        b.C = *C;
        b.terms = {{a, identity(3)}, {s, identity(3)}};
        p.blocks.push_back(b);
    }
    sdp::Block box;
    box.dim = 2;
    box.lp = true;
    box.C = Vec::Ones(2);
    sdp::SymSparse cs;
    cs.add(0, 0, 1), cs.add(1, 1, -1);
    box.terms = {{s, cs}};
    p.blocks.push_back(box);
    const auto r = sdp::solve(p);
    ASSERT_EQ(r.status, sdp::Status::optimal);
    const double l0 = Eigen::SelfAdjointEigenSolver<Mat>(C0).eigenvalues()(0);
    const double l1 = Eigen::SelfAdjointEigenSolver<Mat>(C1).eigenvalues()(0);
    EXPECT_NEAR(r.y(a0) + r.y(a1), l0 + l1 + 2.0, 1e-6);
    EXPECT_NEAR(r.y(s), -1.0, 1e-6);
}

TEST(Sdp, SlackMatrixIsFeasible) {
    std::mt19937_64 rng(3);
    const Mat C = random_sym(5, rng);
    sdp::Problem p;
    const int t = p.add_var(-1, 1.0);
    sdp::SymSparse off;
    off.add(0, 4, 0.5);
    const int u = p.add_var(-1, -0.1);
    sdp::Block b;
    b.dim = 5;
    b.C = C;
    b.terms = {{t, identity(5)}, {u, off}};
    p.blocks.push_back(b);
    const auto r = sdp::solve(p);
    ASSERT_EQ(r.status, sdp::Status::optimal);
    Mat Z = C - r.y(t) * Mat::Identity(5, 5);
    Z(0, 4) -= 0.5 * r.y(u);
    Z(4, 0) -= 0.5 * r.y(u);
    EXPECT_GT(min_eigenvalue(Z), -1e-7);
    EXPECT_LT(r.gap, 1e-6);
}

TEST(Sdp, ValidationErrors) {
    sdp::Problem p;
    const int t = p.add_var(-1, 1.0);
    sdp::Block b;
    b.dim = 2;
    b.C = Mat::Identity(3, 3);
    b.terms.push_back({t, identity(2)});
    p.blocks.push_back(b);
    EXPECT_THROW(sdp::solve(p), ModelError);
    p.blocks[0].C = Mat::Identity(2, 2);
    p.blocks[0].terms[0].first = 7;
    EXPECT_THROW(sdp::solve(p), ModelError);
}
