#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ccmpc/qp.hpp"

using ccmpc::QpStatus;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

ccmpc::QpProblem random_qp(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nd(1, 4), md(0, 12);
  std::normal_distribution<double> nrm;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const int n = nd(rng);
  const int rank = std::uniform_int_distribution<int>(0, n)(rng);
  MatrixXd L(n, std::max(rank, 1));
  for (int i = 0; i < L.size(); ++i) L.data()[i] = nrm(rng);
  MatrixXd H = rank == 0 ? MatrixXd::Zero(n, n) : MatrixXd(L * L.transpose());
  VectorXd g(n);
  for (int i = 0; i < n; ++i) g(i) = 3.0 * nrm(rng);
  const int extra = std::min(md(rng), 12 - 2 * n);
  MatrixXd A(2 * n + extra, n);
  VectorXd b(2 * n + extra);
  A.setZero();
  for (int i = 0; i < n; ++i) {
    A(2 * i, i) = 1.0;
    A(2 * i + 1, i) = -1.0;
    b(2 * i) = 1.0 + 4.0 * uni(rng);
    b(2 * i + 1) = 1.0 + 4.0 * uni(rng);
  }
  VectorXd xhat(n);
  for (int i = 0; i < n; ++i) xhat(i) = uni(rng) - 0.5;
  for (int r = 0; r < extra; ++r) {
    for (int i = 0; i < n; ++i) A(2 * n + r, i) = nrm(rng);
    b(2 * n + r) = A.row(2 * n + r).dot(xhat) + 0.5 * uni(rng);
  }
  return ccmpc::make_qp(0.5 * (H + H.transpose()), g, A, b);
}

}  // namespace

TEST(QpSolver, SingleActiveBound) {
  MatrixXd H(1, 1), A(1, 1);
  H << 2.0;
  A << -1.0;
  const auto p = ccmpc::make_qp(H, VectorXd::Zero(1), A, VectorXd::Constant(1, -1.0));
  const auto sol = ccmpc::solve(p);
  ASSERT_EQ(sol.status, QpStatus::Optimal);
  EXPECT_NEAR(sol.primal(0), 1.0, 1e-7);
  EXPECT_NEAR(sol.dual(0), 2.0, 1e-6);
  const auto ref = ccmpc::enumerate_small(p);
  EXPECT_NEAR(ref.primal(0), 1.0, 1e-12);
  EXPECT_NEAR(ref.dual(0), 2.0, 1e-12);
}

TEST(QpSolver, SimplexCorner) {
  MatrixXd H = 2.0 * MatrixXd::Identity(2, 2);
  VectorXd g(2);
  g << -4.0, 0.0;
  MatrixXd A(3, 2);
  A << 1, 1, -1, 0, 0, -1;
  VectorXd b(3);
  b << 1, 0, 0;
  const auto p = ccmpc::make_qp(H, g, A, b);
  const auto sol = ccmpc::solve(p);
  const auto ref = ccmpc::enumerate_small(p);
  ASSERT_EQ(sol.status, QpStatus::Optimal);
  ASSERT_EQ(ref.status, QpStatus::Optimal);
  EXPECT_NEAR(ref.primal(0), 1.0, 1e-12);
  EXPECT_NEAR(ref.primal(1), 0.0, 1e-12);
  EXPECT_NEAR(sol.primal(0), 1.0, 1e-7);
  EXPECT_NEAR(sol.primal(1), 0.0, 1e-7);
}

TEST(QpSolver, PureLinearBlock) {
  MatrixXd H = MatrixXd::Zero(1, 1), A(1, 1);
  A << -1.0;
  VectorXd g = VectorXd::Constant(1, 2.0);
  const auto p = ccmpc::make_qp(H, g, A, VectorXd::Constant(1, -5.0));
  const auto sol = ccmpc::solve(p);
  ASSERT_EQ(sol.status, QpStatus::Optimal);
  EXPECT_NEAR(sol.primal(0), 5.0, 1e-7);
}

TEST(QpSolver, UnconstrainedStrictlyConvex) {
  MatrixXd H(2, 2);
  H << 3, 1, 1, 2;
  VectorXd g(2);
  g << 1, -1;
  const auto p = ccmpc::make_qp(H, g, MatrixXd::Zero(0, 2), VectorXd::Zero(0));
  const VectorXd expect = -H.ldlt().solve(g);
  EXPECT_LT((ccmpc::enumerate_small(p).primal - expect).norm(), 1e-12);
  const auto sol = ccmpc::solve(p);
  EXPECT_EQ(sol.status, QpStatus::Optimal);
  EXPECT_LT((sol.primal - expect).norm(), 1e-8);
}

TEST(QpSolver, InfeasiblePair) {
  MatrixXd H = MatrixXd::Identity(1, 1), A(2, 1);
  A << 1, -1;
  VectorXd b(2);
  b << 0, -1;
  const auto p = ccmpc::make_qp(H, VectorXd::Zero(1), A, b);
  EXPECT_EQ(ccmpc::enumerate_small(p).status, QpStatus::Infeasible);
  EXPECT_NE(ccmpc::solve(p).status, QpStatus::Optimal);
}

TEST(QpSolver, RejectsIndefiniteOrAsymmetricHessian) {
  MatrixXd H(2, 2);
  H << 1, 0, 0, -1;
  EXPECT_THROW(ccmpc::make_qp(H, VectorXd::Zero(2), MatrixXd::Zero(0, 2), VectorXd::Zero(0)),
               std::invalid_argument);
  H << 1, 1, 0, 1;
  EXPECT_THROW(ccmpc::make_qp(H, VectorXd::Zero(2), MatrixXd::Zero(0, 2), VectorXd::Zero(0)),
               std::invalid_argument);
}

TEST(QpSolver, EnumerationRejectsLargeProblems) {
  const auto p = ccmpc::make_qp(MatrixXd::Identity(9, 9), VectorXd::Zero(9), MatrixXd::Zero(0, 9),
                                VectorXd::Zero(0));
  EXPECT_THROW(ccmpc::enumerate_small(p), std::length_error);
}

TEST(QpSolver, MatchesActiveSetEnumerationOnRandomProblems) {
  std::mt19937_64 rng(2024);
  ccmpc::QpSolver solver;
  for (int trial = 0; trial < 500; ++trial) {
    const auto p = random_qp(rng);
    const auto ref = ccmpc::enumerate_small(p);
    ASSERT_EQ(ref.status, QpStatus::Optimal) << trial;
    const auto sol = solver.solve(p);
    ASSERT_EQ(sol.status, QpStatus::Optimal) << trial;
    EXPECT_LE(std::abs(sol.objective - ref.objective), 1e-6 * std::max(1.0, std::abs(ref.objective)))
        << trial;
    EXPECT_GE(sol.dual.minCoeff(), 0.0);
    EXPECT_LE(sol.kkt_residuals.max(), 1e-8);
  }
}

TEST(QpSolver, ArgminInvariantUnderCostScaling) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    auto p = random_qp(rng);
    p.hessian += MatrixXd::Identity(p.n(), p.n()).sparseView();
    const auto a = ccmpc::solve(p);
    for (double alpha : {0.1, 10.0}) {
      auto q = p;
      q.hessian *= alpha;
      q.linear_cost *= alpha;
      const auto b = ccmpc::solve(q, 1e-10);
      EXPECT_LT((a.primal - b.primal).lpNorm<Eigen::Infinity>(), 1e-6) << trial;
    }
  }
}

TEST(QpSolver, WarmStartIsDeterministic) {
  std::mt19937_64 rng(5);
  const auto p = random_qp(rng);
  const VectorXd warm = VectorXd::Constant(p.n(), 0.1);
  ccmpc::QpSolver s1, s2;
  const auto a = s1.solve(p, warm);
  const auto b = s2.solve(p, warm);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(a.primal, b.primal);
  EXPECT_EQ(a.dual, b.dual);
}

TEST(QpSolver, SlackEliminationMatchesDenseOracle) {
  // x0, x1 coupled by curvature; y0, y1 slack-like columns on separate rows.
  MatrixXd H = MatrixXd::Zero(4, 4);
  H.topLeftCorner(2, 2) << 2, 0.5, 0.5, 1;
  VectorXd g(4);
  g << -1, -2, 3, 5;
  MatrixXd A(7, 4);
  A << 1, 1, -1, 0,
       1, -1, 0, -1,
       0, 0, -1, 0,
       0, 0, 0, -1,
       0, 0, 1, 0,
       -1, 0, 0, 0,
       0, -1, 0, 0;
  VectorXd b(7);
  b << 0.5, 0.2, 0, 0, 0.3, 0, 0;
  const auto p = ccmpc::make_qp(H, g, A, b);
  const auto ref = ccmpc::enumerate_small(p);
  const auto sol = ccmpc::solve(p);
  ASSERT_EQ(sol.status, QpStatus::Optimal);
  EXPECT_NEAR(sol.objective, ref.objective, 1e-7);
  EXPECT_LT((sol.primal - ref.primal).lpNorm<Eigen::Infinity>(), 1e-6);
}
