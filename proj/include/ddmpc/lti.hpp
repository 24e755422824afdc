#pragma once

/**
 * @file
 * @brief Discrete-time LTI systems: simulation, observability, lag and the
 * extended (input/output window) state-space representation.
 */

#include "ddmpc/linalg.hpp"

#include <optional>
#include <string>

namespace ddmpc {

class NotObservableError : public Error
{
public:
  using Error::Error;
};

class WindowError : public Error
{
public:
  using Error::Error;
};

/// x_{t+1} = A x_t + B u_t,  y_t = C x_t + D u_t
class LtiSystem
{
public:
  LtiSystem(Matrix a, Matrix b, Matrix c, Matrix d)
      : a_(std::move(a)), b_(std::move(b)), c_(std::move(c)), d_(std::move(d))
  {
    const auto n = a_.rows();
    if (n < 1 || a_.cols() != n) { throw DimensionError("LtiSystem: A must be square and non-empty"); }
    if (b_.rows() != n || b_.cols() < 1) { throw DimensionError("LtiSystem: B must have n rows and m >= 1 columns"); }
    if (c_.cols() != n || c_.rows() < 1) { throw DimensionError("LtiSystem: C must have n columns and p >= 1 rows"); }
    if (d_.rows() != c_.rows() || d_.cols() != b_.cols()) { throw DimensionError("LtiSystem: D must be p x m"); }
  }

  [[nodiscard]] const Matrix & A() const noexcept { return a_; }
  [[nodiscard]] const Matrix & B() const noexcept { return b_; }
  [[nodiscard]] const Matrix & C() const noexcept { return c_; }
  [[nodiscard]] const Matrix & D() const noexcept { return d_; }

  [[nodiscard]] int n() const noexcept { return static_cast<int>(a_.rows()); }
  [[nodiscard]] int m() const noexcept { return static_cast<int>(b_.cols()); }
  [[nodiscard]] int p() const noexcept { return static_cast<int>(c_.rows()); }

private:
  Matrix a_, b_, c_, d_;
};

/// Input/output samples stored column-wise (one column per time step).
struct Trajectory
{
  Matrix u;                 ///< m x T
  Matrix y;                 ///< p x T
  std::optional<Matrix> x;  ///< n x (T+1) when known

  [[nodiscard]] int length() const noexcept { return static_cast<int>(u.cols()); }
};

/// xi = [u_{t-l}; ...; u_{t-1}; y_{t-l}; ...; y_{t-1}]
struct ExtendedState
{
  Vector xi;
  int window = 0;
  int m = 0;
  int p = 0;

  [[nodiscard]] auto inputs() const { return xi.head(window * m); }
  [[nodiscard]] auto outputs() const { return xi.tail(window * p); }
};

/// Non-minimal realization whose state is the past input/output window.
struct ExtendedLti
{
  Matrix A;      ///< n_xi x n_xi
  Matrix B;      ///< n_xi x m
  Matrix C;      ///< p x n_xi
  Matrix D;      ///< p x m
  Matrix T_map;  ///< n x n_xi, T_map * xi_t = x_t
  int window = 0;

  [[nodiscard]] int state_dim() const noexcept { return static_cast<int>(A.rows()); }
};

inline Trajectory simulate(const LtiSystem & sys, const Vector & x0, const Matrix & u_seq)
{
  if (x0.size() != sys.n()) { throw DimensionError("simulate: x0 has wrong dimension"); }
  if (u_seq.rows() != sys.m()) { throw DimensionError("simulate: input sequence has wrong row count"); }
  if (u_seq.cols() < 1) { throw DimensionError("simulate: empty input sequence"); }

  const auto steps = u_seq.cols();
  Trajectory traj;
  traj.u = u_seq;
  traj.y.resize(sys.p(), steps);
  Matrix x(sys.n(), steps + 1);
  x.col(0) = x0;
  for (Eigen::Index t = 0; t < steps; ++t) {
    traj.y.col(t) = sys.C() * x.col(t) + sys.D() * u_seq.col(t);
    x.col(t + 1) = sys.A() * x.col(t) + sys.B() * u_seq.col(t);
  }
  traj.x = std::move(x);
  return traj;
}

/// [C; CA; ...; CA^{l-1}]
inline Matrix observability_matrix(const LtiSystem & sys, int l)
{
  if (l < 1) { throw InvalidArgument("observability_matrix: l must be >= 1"); }
  Matrix obs(static_cast<Eigen::Index>(l) * sys.p(), sys.n());
  Matrix block = sys.C();
  for (int i = 0; i < l; ++i) {
    obs.middleRows(static_cast<Eigen::Index>(i) * sys.p(), sys.p()) = block;
    block = block * sys.A();
  }
  return obs;
}

/// [B, AB, ..., A^{n-1}B]
inline Matrix controllability_matrix(const LtiSystem & sys)
{
  Matrix ctrb(sys.n(), static_cast<Eigen::Index>(sys.n()) * sys.m());
  Matrix block = sys.B();
  for (int i = 0; i < sys.n(); ++i) {
    ctrb.middleCols(static_cast<Eigen::Index>(i) * sys.m(), sys.m()) = block;
    block = sys.A() * block;
  }
  return ctrb;
}

inline bool is_minimal(const LtiSystem & sys, double rank_tol = kDefaultRankTolerance)
{
  return linalg::numerical_rank(controllability_matrix(sys), rank_tol) == sys.n()
         && linalg::numerical_rank(observability_matrix(sys, sys.n()), rank_tol) == sys.n();
}

/// Smallest l with rank(O_l) = n.
inline int lag(const LtiSystem & sys, double rank_tol = kDefaultRankTolerance)
{
  if (linalg::numerical_rank(observability_matrix(sys, sys.n()), rank_tol) < sys.n()) {
    throw NotObservableError("lag: (A, C) is not observable");
  }
  for (int l = 1; l <= sys.n(); ++l) {
    if (linalg::numerical_rank(observability_matrix(sys, l), rank_tol) == sys.n()) { return l; }
  }
  return sys.n();
}

/// Block lower-triangular Toeplitz matrix of Markov parameters (D on the diagonal).
inline Matrix markov_toeplitz(const LtiSystem & sys, int l)
{
  const int m = sys.m();
  const int p = sys.p();
  Matrix toeplitz = Matrix::Zero(static_cast<Eigen::Index>(l) * p, static_cast<Eigen::Index>(l) * m);
  Matrix markov = sys.B();  // A^{k-1} B
  for (int k = 0; k < l; ++k) {
    const Matrix block = k == 0 ? sys.D() : Matrix(sys.C() * markov);
    if (k > 0) { markov = sys.A() * markov; }
    for (int j = 0; j + k < l; ++j) {
      toeplitz.block(static_cast<Eigen::Index>(j + k) * p, static_cast<Eigen::Index>(j) * m, p, m) = block;
    }
  }
  return toeplitz;
}

/**
 * @brief Build the extended realization with state xi_t = (u_{[t-l,t-1]}, y_{[t-l,t-1]}).
 *
 * x_{t-l} is recovered from the window through the left inverse of O_l applied
 * to the output window minus its forced response; propagating l steps gives
 * x_t = T_map * xi_t. The output map is C * T_map and the state update shifts
 * both windows and appends (u_t, y_t).
 */
inline ExtendedLti extend_system(const LtiSystem & sys, int l, double rank_tol = kDefaultRankTolerance)
{
  const int lag_min = lag(sys, rank_tol);
  if (l < lag_min) {
    throw InvalidArgument("extend_system: window " + std::to_string(l) + " is shorter than the lag "
                          + std::to_string(lag_min));
  }
  const int n = sys.n();
  const int m = sys.m();
  const int p = sys.p();
  const Eigen::Index lm = static_cast<Eigen::Index>(l) * m;
  const Eigen::Index lp = static_cast<Eigen::Index>(l) * p;
  const Eigen::Index nxi = lm + lp;

  const Matrix obs = observability_matrix(sys, l);
  if (linalg::numerical_rank(obs, rank_tol) < n) { throw NotObservableError("extend_system: O_l is rank deficient"); }
  const Matrix obs_left_inverse = linalg::pseudo_inverse(obs);

  // [A^{l-1}B, ..., AB, B]
  Matrix reach(n, lm);
  Matrix block = sys.B();
  for (int j = l - 1; j >= 0; --j) {
    reach.middleCols(static_cast<Eigen::Index>(j) * m, m) = block;
    block = sys.A() * block;
  }
  const Matrix a_pow_l = linalg::matrix_power(sys.A(), l);

  ExtendedLti ext;
  ext.window = l;
  ext.T_map.resize(n, nxi);
  ext.T_map.leftCols(lm) = reach - a_pow_l * obs_left_inverse * markov_toeplitz(sys, l);
  ext.T_map.rightCols(lp) = a_pow_l * obs_left_inverse;

  ext.C = sys.C() * ext.T_map;
  ext.D = sys.D();

  ext.A = Matrix::Zero(nxi, nxi);
  ext.B = Matrix::Zero(nxi, m);
  if (l > 1) {
    ext.A.block(0, m, lm - m, lm - m).setIdentity();
    ext.A.block(lm, lm + p, lp - p, lp - p).setIdentity();
  }
  ext.B.block(lm - m, 0, m, m).setIdentity();
  ext.A.bottomRows(p) = ext.C;
  ext.B.bottomRows(p) = ext.D;
  return ext;
}

/// Window of the l samples preceding t.
inline ExtendedState extended_state_window(const Trajectory & traj, int t, int l)
{
  if (l < 1) { throw WindowError("extended_state_window: l must be >= 1"); }
  if (t < l || t > traj.length() || traj.y.cols() != traj.u.cols()) {
    throw WindowError("extended_state_window: window [t-l, t-1] out of range");
  }
  const auto m = traj.u.rows();
  const auto p = traj.y.rows();
  ExtendedState state;
  state.window = l;
  state.m = static_cast<int>(m);
  state.p = static_cast<int>(p);
  state.xi.resize(static_cast<Eigen::Index>(l) * (m + p));
  for (int k = 0; k < l; ++k) {
    state.xi.segment(k * m, m) = traj.u.col(t - l + k);
    state.xi.segment(l * m + k * p, p) = traj.y.col(t - l + k);
  }
  return state;
}

/// Window stacked from explicit input (m x l) and output (p x l) samples.
inline ExtendedState make_extended_state(const Matrix & u_window, const Matrix & y_window)
{
  if (u_window.cols() != y_window.cols() || u_window.cols() < 1) {
    throw WindowError("make_extended_state: windows must have equal, positive length");
  }
  Trajectory traj{u_window, y_window, std::nullopt};
  return extended_state_window(traj, static_cast<int>(u_window.cols()), static_cast<int>(u_window.cols()));
}

/// Linearized continuous stirred-tank reactor, sampling time 0.5.
inline LtiSystem cstr_example()
{
  Matrix a(2, 2);
  a << 0.9749, -0.0135,
       0.0004, 0.9888;
  Matrix b(2, 1);
  b << 0.041e-4,
       5.934e-4;
  Matrix c(1, 2);
  c << 0.0, 1.0;
  return LtiSystem{a, b, c, Matrix::Zero(1, 1)};
}

/// Steady state (x_s, y_s) reached under the constant input u_s.
struct Equilibrium
{
  Vector x;
  Vector y;
};

inline Equilibrium equilibrium(const LtiSystem & sys, const Vector & u_s)
{
  if (u_s.size() != sys.m()) { throw DimensionError("equilibrium: u_s has wrong dimension"); }
  const Matrix i_minus_a = Matrix::Identity(sys.n(), sys.n()) - sys.A();
  Eigen::FullPivLU<Matrix> lu(i_minus_a);
  if (!lu.isInvertible()) { throw InvalidArgument("equilibrium: I - A is singular"); }
  Equilibrium eq;
  eq.x = lu.solve(sys.B() * u_s);
  eq.y = sys.C() * eq.x + sys.D() * u_s;
  return eq;
}

}  // namespace ddmpc
