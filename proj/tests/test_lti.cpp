#include "ddmpc/lti.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <complex>

using namespace ddmpc;
using ddmpc::testing::random_inputs;
using ddmpc::testing::random_stable_system;

TEST(Simulate, ZeroInputZeroStateStaysAtRest)
{
  const auto sys = cstr_example();
  const auto traj = simulate(sys, Vector::Zero(2), Matrix::Zero(1, 10));
  EXPECT_EQ(traj.y.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(traj.x->cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(traj.x->cols(), 11);
}

TEST(Simulate, CstrOneStepReproducesInputMatrix)
{
  const auto sys = cstr_example();
  const auto traj = simulate(sys, Vector::Zero(2), Matrix::Ones(1, 1));
  EXPECT_DOUBLE_EQ((*traj.x)(0, 1), 0.041e-4);
  EXPECT_DOUBLE_EQ((*traj.x)(1, 1), 5.934e-4);
  EXPECT_EQ(traj.y(0, 0), 0.0);
}

TEST(Simulate, ImpulseResponseEqualsMarkovParameters)
{
  const auto sys = random_stable_system(4, 2, 3, 11);
  for (int channel = 0; channel < sys.m(); ++channel) {
    Matrix u = Matrix::Zero(2, 6);
    u(channel, 0) = 1.0;
    const auto traj = simulate(sys, Vector::Zero(4), u);
    // Direct product oracle: D, CB, CAB, CA^2B, ...
    Matrix power = Matrix::Identity(4, 4);
    EXPECT_LE((traj.y.col(0) - sys.D().col(channel)).cwiseAbs().maxCoeff(), 1e-14);
    for (int k = 1; k < 6; ++k) {
      const Vector markov = sys.C() * power * sys.B().col(channel);
      EXPECT_LE((traj.y.col(k) - markov).cwiseAbs().maxCoeff(), 1e-12);
      power = power * sys.A();
    }
  }
}

TEST(Simulate, IsLinearInInitialStateAndInput)
{
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sys = random_stable_system(3, 2, 2, 100 + trial);
    const Vector xa = ddmpc::testing::random_matrix(3, 1, rng);
    const Vector xb = ddmpc::testing::random_matrix(3, 1, rng);
    const Matrix ua = random_inputs(2, 30, rng);
    const Matrix ub = random_inputs(2, 30, rng);
    const auto sum = simulate(sys, xa + xb, ua + ub);
    const auto a = simulate(sys, xa, ua);
    const auto b = simulate(sys, xb, ub);
    EXPECT_LE((sum.y - a.y - b.y).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((*sum.x - *a.x - *b.x).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Simulate, RejectsDimensionMismatch)
{
  const auto sys = cstr_example();
  EXPECT_THROW(simulate(sys, Vector::Zero(3), Matrix::Zero(1, 4)), DimensionError);
  EXPECT_THROW(simulate(sys, Vector::Zero(2), Matrix::Zero(2, 4)), DimensionError);
  EXPECT_THROW(simulate(sys, Vector::Zero(2), Matrix::Zero(1, 0)), DimensionError);
  EXPECT_THROW(LtiSystem(Matrix::Zero(2, 2), Matrix::Zero(3, 1), Matrix::Zero(1, 2), Matrix::Zero(1, 1)), DimensionError);
}

TEST(ObservabilityMatrix, BasicCases)
{
  const auto sys = cstr_example();
  EXPECT_EQ(observability_matrix(sys, 1), sys.C());
  const Matrix obs = observability_matrix(sys, 2);
  ASSERT_EQ(obs.rows(), 2);
  EXPECT_DOUBLE_EQ(obs(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(obs(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(obs(1, 0), 0.0004);
  EXPECT_DOUBLE_EQ(obs(1, 1), 0.9888);

  const auto full = random_stable_system(3, 1, 3, 3);
  const LtiSystem identity_out(full.A(), full.B(), Matrix::Identity(3, 3), Matrix::Zero(3, 1));
  EXPECT_EQ(observability_matrix(identity_out, 4).topRows(3), Matrix::Identity(3, 3));
  EXPECT_THROW(observability_matrix(sys, 0), InvalidArgument);
}

TEST(ObservabilityMatrix, LeadingRowsArePrefix)
{
  for (int seed = 0; seed < 10; ++seed) {
    const auto sys = random_stable_system(4, 1, 2, 200 + seed);
    for (int l = 1; l < 6; ++l) {
      const Matrix shorter = observability_matrix(sys, l);
      const Matrix longer = observability_matrix(sys, l + 1);
      EXPECT_EQ(longer.topRows(shorter.rows()), shorter);
    }
  }
}

TEST(Lag, KnownValues)
{
  const auto sys = cstr_example();
  EXPECT_EQ(lag(sys), 2);

  const auto base = random_stable_system(3, 1, 1, 8);
  EXPECT_EQ(lag(LtiSystem(base.A(), base.B(), Matrix::Identity(3, 3), Matrix::Zero(3, 1))), 1);

  Matrix a(1, 1);
  a << 0.3;
  EXPECT_EQ(lag(LtiSystem(a, Matrix::Ones(1, 1), Matrix::Constant(1, 1, -2.0), Matrix::Zero(1, 1))), 1);
}

TEST(Lag, UnobservableSystemThrows)
{
  Matrix a = Matrix::Identity(2, 2) * 0.5;
  Matrix c(1, 2);
  c << 1.0, 0.0;
  EXPECT_THROW(lag(LtiSystem(a, Matrix::Ones(2, 1), c, Matrix::Zero(1, 1))), NotObservableError);
}

TEST(Lag, NeverExceedsStateDimension)
{
  for (int seed = 0; seed < 30; ++seed) {
    const int n = 1 + seed % 5;
    const auto sys = random_stable_system(n, 1, 1 + seed % 2, 300 + seed);
    EXPECT_LE(lag(sys), n);
  }
}

TEST(Cstr, MatricesAndProperties)
{
  const auto sys = cstr_example();
  EXPECT_EQ(sys.n(), 2);
  EXPECT_EQ(sys.m(), 1);
  EXPECT_EQ(sys.p(), 1);
  EXPECT_DOUBLE_EQ(sys.A()(0, 0), 0.9749);
  EXPECT_DOUBLE_EQ(sys.A()(0, 1), -0.0135);
  EXPECT_DOUBLE_EQ(sys.A()(1, 0), 0.0004);
  EXPECT_DOUBLE_EQ(sys.A()(1, 1), 0.9888);
  EXPECT_TRUE(is_minimal(sys));
  const double radius = linalg::spectral_radius(sys.A());
  EXPECT_NEAR(radius, 0.9884, 1e-4);
  EXPECT_LT(radius, 1.0);
}

TEST(Cstr, EquilibriumOutputForNominalInput)
{
  const auto sys = cstr_example();
  const auto eq = equilibrium(sys, Vector::Constant(1, 0.8));
  // (I - A)^{-1} B u by Cramer's rule
  const double det = (1 - 0.9749) * (1 - 0.9888) + 0.0135 * 0.0004;
  const double x2 = ((1 - 0.9749) * 5.934e-4 * 0.8 + 0.0004 * 0.041e-4 * 0.8) / det;
  EXPECT_NEAR(eq.y(0), x2, 1e-15);
  EXPECT_NEAR(eq.y(0), 0.0415915, 1e-6);
  EXPECT_LE((sys.A() * eq.x + sys.B() * 0.8 - eq.x).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ExtendedState, WindowOrdering)
{
  Trajectory zero{Matrix::Zero(2, 5), Matrix::Zero(3, 5), std::nullopt};
  EXPECT_EQ(extended_state_window(zero, 4, 3).xi, Vector::Zero(15));

  Trajectory single{Matrix::Constant(1, 1, 7.0), Matrix::Constant(1, 1, 3.0), std::nullopt};
  const auto one = extended_state_window(single, 1, 1);
  EXPECT_EQ(one.xi, (Vector(2) << 7, 3).finished());

  Trajectory scalar{(Matrix(1, 3) << 1, 2, 3).finished(), (Matrix(1, 3) << 4, 5, 6).finished(), std::nullopt};
  EXPECT_EQ(extended_state_window(scalar, 3, 2).xi, (Vector(4) << 2, 3, 5, 6).finished());

  EXPECT_THROW(extended_state_window(scalar, 1, 2), WindowError);
  EXPECT_THROW(extended_state_window(scalar, 4, 2), WindowError);
}

namespace {

/// Max |y_ext - y| and |T xi - x| when the extended system is driven from a matching window.
std::pair<double, double> extended_mismatch(const LtiSystem & sys, int l, std::uint64_t seed)
{
  std::mt19937_64 rng(seed);
  const auto ext = extend_system(sys, l);
  const Vector x0 = ddmpc::testing::random_matrix(sys.n(), 1, rng);
  const Matrix u = random_inputs(sys.m(), 50 + l, rng);
  const auto traj = simulate(sys, x0, u);

  Vector xi = extended_state_window(traj, l, l).xi;
  double y_err = 0.0;
  double x_err = 0.0;
  for (int t = l; t < traj.length(); ++t) {
    const Vector window = extended_state_window(traj, t, l).xi;
    x_err = std::max(x_err, (ext.T_map * window - traj.x->col(t)).cwiseAbs().maxCoeff());
    const Vector y = ext.C * xi + ext.D * u.col(t);
    y_err = std::max(y_err, (y - traj.y.col(t)).cwiseAbs().maxCoeff());
    xi = ext.A * xi + ext.B * u.col(t);
  }
  return {y_err, x_err};
}

}  // namespace

TEST(ExtendSystem, IdentityOutputReconstructsState)
{
  const auto base = random_stable_system(3, 2, 1, 21);
  const LtiSystem sys(base.A(), base.B(), Matrix::Identity(3, 3), Matrix::Zero(3, 2));
  const auto [y_err, x_err] = extended_mismatch(sys, 3, 1);
  EXPECT_LE(y_err, 1e-10);
  EXPECT_LE(x_err, 1e-10);
}

TEST(ExtendSystem, CstrSpectrumAndShape)
{
  const auto sys = cstr_example();
  const auto ext = extend_system(sys, 2);
  EXPECT_EQ(ext.state_dim(), 4);
  const auto eig = Eigen::EigenSolver<Matrix>(ext.A).eigenvalues();
  const auto eig_a = Eigen::EigenSolver<Matrix>(sys.A()).eigenvalues();
  std::vector<double> moduli;
  for (Eigen::Index i = 0; i < eig.size(); ++i) { moduli.push_back(std::abs(eig(i))); }
  std::sort(moduli.begin(), moduli.end());
  EXPECT_NEAR(moduli[0], 0.0, 1e-6);
  EXPECT_NEAR(moduli[1], 0.0, 1e-6);
  for (Eigen::Index i = 0; i < eig_a.size(); ++i) {
    double best = 1.0;
    for (Eigen::Index j = 0; j < eig.size(); ++j) { best = std::min(best, std::abs(eig(j) - eig_a(i))); }
    EXPECT_LE(best, 1e-8) << "missing eigenvalue " << eig_a(i);
  }
  EXPECT_NEAR(std::abs(eig_a(0)) + std::abs(eig_a(1)), 0.9753 + 0.9884, 2e-4);
}

TEST(ExtendSystem, ShiftStructure)
{
  const auto sys = random_stable_system(3, 2, 2, 31);
  const int l = 3;
  const auto ext = extend_system(sys, l);
  std::mt19937_64 rng(3);
  const Vector xi = ddmpc::testing::random_matrix(ext.state_dim(), 1, rng);
  const Vector u = ddmpc::testing::random_matrix(2, 1, rng);
  const Vector next = ext.A * xi + ext.B * u;
  EXPECT_EQ(next.head((l - 1) * 2), xi.segment(2, (l - 1) * 2));
  EXPECT_EQ(next.segment((l - 1) * 2, 2), u);
  EXPECT_EQ(ext.B.topRows((l - 1) * 2), Matrix::Zero((l - 1) * 2, 2));
  EXPECT_EQ(next.segment(l * 2, (l - 1) * 2), xi.segment(l * 2 + 2, (l - 1) * 2));
}

TEST(ExtendSystem, MatchesMinimalSystemOnRandomRuns)
{
  for (int seed = 0; seed < 50; ++seed) {
    const int n = 1 + seed % 4;
    const auto sys = random_stable_system(n, 1 + seed % 2, 1 + (seed / 2) % 2, 400 + seed);
    const int l = lag(sys) + seed % 2;
    const auto [y_err, x_err] = extended_mismatch(sys, l, seed);
    EXPECT_LE(y_err, 1e-8) << "seed " << seed;
    EXPECT_LE(x_err, 1e-8) << "seed " << seed;
  }
}

TEST(ExtendSystem, RejectsShortWindow)
{
  EXPECT_THROW(extend_system(cstr_example(), 1), InvalidArgument);
}
