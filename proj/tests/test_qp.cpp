#include "ddmpc/qp.hpp"
#include "qp_oracle.hpp"

#include <gtest/gtest.h>

using namespace ddmpc;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

QpProblem projection_problem()
{
  QpProblem qp;
  qp.P = 2.0 * Matrix::Identity(2, 2);
  qp.q = Vector::Zero(2);
  qp.A_eq = (Matrix(1, 2) << 1.0, 0.0).finished();
  qp.b_eq = Vector::Ones(1);
  qp.A_box = Matrix::Zero(0, 2);
  qp.lb = Vector::Zero(0);
  qp.ub = Vector::Zero(0);
  return qp;
}

QpProblem clamp_problem()
{
  // (z - 2)^2 = z^2 - 4z + 4
  QpProblem qp;
  qp.P = Matrix::Constant(1, 1, 2.0);
  qp.q = Vector::Constant(1, -4.0);
  qp.A_eq = Matrix::Zero(0, 1);
  qp.b_eq = Vector::Zero(0);
  qp.A_box = Matrix::Ones(1, 1);
  qp.lb = Vector::Constant(1, -kInf);
  qp.ub = Vector::Ones(1);
  return qp;
}

bool satisfies_contract(const QpProblem & qp, const QpSolution & sol, const QpSettings & settings)
{
  const auto kkt = kkt_residuals(qp, sol.z, sol.dual_eq, sol.dual_box);
  return kkt.stationarity <= settings.eps_abs + settings.eps_rel * sol.stationarity_scale
         && kkt.primal_eq <= settings.eps_abs && kkt.primal_box <= settings.eps_abs && kkt.comp_slack <= settings.eps_abs;
}

}  // namespace

TEST(QpSolve, ProjectionOntoAffineSet)
{
  const auto qp = projection_problem();
  const auto sol = solve(qp);
  ASSERT_EQ(sol.status, QpStatus::Solved);
  EXPECT_NEAR(sol.z(0), 1.0, 1e-12);
  EXPECT_NEAR(sol.z(1), 0.0, 1e-12);
  EXPECT_NEAR(sol.objective, 1.0, 1e-12);
}

TEST(QpSolve, ClampedUnconstrainedOptimum)
{
  const auto sol = solve(clamp_problem());
  ASSERT_EQ(sol.status, QpStatus::Solved);
  EXPECT_NEAR(sol.z(0), 1.0, 1e-10);
  EXPECT_NEAR(sol.objective + 4.0, 1.0, 1e-10);
  EXPECT_GT(sol.dual_box(0), 0.0);
}

TEST(QpSolve, RandomInstancesMatchProjectedGradientOracle)
{
  std::mt19937_64 rng(2024);
  const QpSettings settings;
  for (int instance = 0; instance < 50; ++instance) {
    const auto qp = ddmpc::testing::random_qp(rng);
    const auto sol = solve(qp, settings);
    ASSERT_EQ(sol.status, QpStatus::Solved) << "instance " << instance;
    EXPECT_TRUE(satisfies_contract(qp, sol, settings)) << "instance " << instance;
    const auto oracle = ddmpc::testing::projected_gradient_oracle(qp);
    EXPECT_NEAR(sol.objective, oracle.dual_value, 1e-6 * (1.0 + std::abs(oracle.dual_value))) << "instance " << instance;
  }
}

TEST(QpSolve, NoFeasiblePointIsBetter)
{
  std::mt19937_64 rng(77);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int instance = 0; instance < 20; ++instance) {
    Vector z0;
    const auto qp = ddmpc::testing::random_qp(rng, &z0);
    const auto sol = solve(qp);
    ASSERT_EQ(sol.status, QpStatus::Solved);
    Eigen::FullPivLU<Matrix> lu(qp.A_eq.rows() ? qp.A_eq : Matrix::Zero(1, qp.dim()));
    const Matrix kernel = lu.kernel();
    int tested = 0;
    for (int attempt = 0; attempt < 5000 && tested < 100; ++attempt) {
      Vector r(kernel.cols());
      for (Eigen::Index i = 0; i < r.size(); ++i) { r(i) = normal(rng); }
      const Vector w = z0 + kernel * r * 0.3;
      const Vector a = qp.A_box * w;
      if ((a.array() < qp.lb.array()).any() || (a.array() > qp.ub.array()).any()) { continue; }
      ++tested;
      const double fw = qp_objective(qp, w);
      EXPECT_LE(sol.objective, fw + 1e-6 * (1.0 + std::abs(fw)));
    }
    EXPECT_GT(tested, 0);
  }
}

TEST(QpSolve, WarmStartDoesNotMoveSolution)
{
  std::mt19937_64 rng(5);
  for (int instance = 0; instance < 20; ++instance) {
    const auto qp = ddmpc::testing::random_qp(rng);
    QpSolver solver(qp);
    const auto cold = solver.solve();
    ASSERT_EQ(cold.status, QpStatus::Solved);
    solver.warm_start(cold.z, cold.dual_box);
    const auto warm = solver.solve();
    ASSERT_EQ(warm.status, QpStatus::Solved);
    EXPECT_LE((warm.z - cold.z).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(QpSolve, CostScalingLeavesArgminUnchanged)
{
  std::mt19937_64 rng(6);
  for (int instance = 0; instance < 20; ++instance) {
    auto qp = ddmpc::testing::random_qp(rng);
    const auto base = solve(qp);
    for (double c : {1e-3, 7.0, 1e3}) {
      QpProblem scaled = qp;
      scaled.P *= c;
      scaled.q *= c;
      const auto sol = solve(scaled);
      ASSERT_EQ(sol.status, QpStatus::Solved);
      EXPECT_LE((sol.z - base.z).cwiseAbs().maxCoeff(), 1e-6 * (1.0 + base.z.cwiseAbs().maxCoeff()));
    }
  }
}

TEST(QpSolve, Deterministic)
{
  std::mt19937_64 rng(8);
  const auto qp = ddmpc::testing::random_qp(rng);
  const auto a = solve(qp);
  const auto b = solve(qp);
  EXPECT_EQ(a.z, b.z);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(QpSolve, SemidefiniteCostGetsRidge)
{
  QpProblem qp;
  qp.P = Matrix::Zero(3, 3);
  qp.P(0, 0) = 2.0;
  qp.q = Vector::Zero(3);
  qp.A_eq = (Matrix(1, 3) << 1.0, 1.0, 1.0).finished();
  qp.b_eq = Vector::Ones(1);
  qp.A_box = Matrix::Identity(3, 3);
  qp.lb = Vector::Zero(3);
  qp.ub = Vector::Ones(3);
  const auto sol = solve(qp);
  ASSERT_EQ(sol.status, QpStatus::Solved);
  EXPECT_NEAR(sol.ridge, 1e-10 * 2.0 / 3.0, 1e-20);
  EXPECT_NEAR(sol.z(0), 0.0, 1e-8);
  EXPECT_NEAR(sol.z(1) + sol.z(2), 1.0, 1e-8);
}

TEST(QpSolve, InconsistentEqualitiesAreInfeasible)
{
  QpProblem qp = projection_problem();
  qp.A_eq = (Matrix(2, 2) << 1.0, 0.0, 2.0, 0.0).finished();
  qp.b_eq = (Vector(2) << 1.0, 3.0).finished();
  EXPECT_EQ(solve(qp).status, QpStatus::Infeasible);
}

TEST(QpSolve, RedundantEqualitiesAreHandled)
{
  QpProblem qp = projection_problem();
  qp.A_eq = (Matrix(2, 2) << 1.0, 0.0, 2.0, 0.0).finished();
  qp.b_eq = (Vector(2) << 1.0, 2.0).finished();
  const auto sol = solve(qp);
  ASSERT_EQ(sol.status, QpStatus::Solved);
  EXPECT_NEAR(sol.z(0), 1.0, 1e-10);
}

TEST(QpSolve, EmptyIntersectionIsInfeasible)
{
  QpProblem qp = projection_problem();
  qp.b_eq = Vector::Constant(1, 5.0);
  qp.A_box = (Matrix(1, 2) << 1.0, 0.0).finished();
  qp.lb = Vector::Constant(1, -1.0);
  qp.ub = Vector::Constant(1, 1.0);
  EXPECT_EQ(solve(qp).status, QpStatus::Infeasible);
}

TEST(QpSolve, IterationLimit)
{
  std::mt19937_64 rng(9);
  const auto qp = ddmpc::testing::random_qp(rng);
  QpSettings settings;
  settings.max_iter = 1;
  settings.polish = false;
  EXPECT_EQ(solve(qp, settings).status, QpStatus::MaxIter);
}

TEST(QpSolve, InvalidInputs)
{
  QpProblem qp = clamp_problem();
  qp.lb = Vector::Constant(1, 2.0);
  EXPECT_THROW(QpSolver{qp}, InvalidArgument);
  qp = clamp_problem();
  qp.P = Matrix::Zero(2, 2);
  EXPECT_THROW(QpSolver{qp}, DimensionError);
  QpSettings bad;
  bad.eps_abs = 0.0;
  EXPECT_THROW(QpSolver(clamp_problem(), bad), InvalidArgument);
}

TEST(KktResiduals, ExactProjectionSolution)
{
  const auto qp = projection_problem();
  // z = (1, 0): 2z + nu e1 = 0 gives nu = -2.
  const auto res = kkt_residuals(qp, (Vector(2) << 1.0, 0.0).finished(), Vector::Constant(1, -2.0), Vector::Zero(0));
  EXPECT_LE(res.stationarity, 1e-12);
  EXPECT_LE(res.primal_eq, 1e-12);
  EXPECT_LE(res.primal_box, 1e-12);
  EXPECT_LE(res.comp_slack, 1e-12);
}

TEST(KktResiduals, PerturbedPointIsDetected)
{
  const auto qp = projection_problem();
  const auto res = kkt_residuals(qp, (Vector(2) << 1.0, 1e-3).finished(), Vector::Constant(1, -2.0), Vector::Zero(0));
  EXPECT_NEAR(res.stationarity, 2e-3, 1e-15);
  EXPECT_GT(res.stationarity, 1e-6);
}

TEST(KktResiduals, InactiveConstraintsHaveNoSlackness)
{
  const auto qp = clamp_problem();
  const auto res = kkt_residuals(qp, Vector::Constant(1, 0.3), Vector::Zero(0), Vector::Zero(1));
  EXPECT_EQ(res.comp_slack, 0.0);
  EXPECT_EQ(res.primal_box, 0.0);
  EXPECT_THROW(kkt_residuals(qp, Vector::Zero(2), Vector::Zero(0), Vector::Zero(1)), DimensionError);
}

TEST(KktResiduals, WrongDualSignShowsAsSlackness)
{
  const auto qp = clamp_problem();
  // at the upper bound with a lower-bound multiplier (lb = -inf)
  const auto res = kkt_residuals(qp, Vector::Ones(1), Vector::Zero(0), Vector::Constant(1, -0.5));
  EXPECT_EQ(res.comp_slack, 0.5);
}
