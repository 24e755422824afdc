#pragma once

/**
 * @file
 * @brief Hankel matrices, persistency of excitation, data generation and
 * data-driven simulation.
 */

#include "ddmpc/lti.hpp"

#include <cstdint>
#include <optional>
#include <random>

namespace ddmpc {

class InsufficientDataError : public Error
{
public:
  using Error::Error;
};

class PersistencyError : public Error
{
public:
  using Error::Error;
};

class InconsistentWindowError : public Error
{
public:
  using Error::Error;
};

/// Offline experiment: inputs, (optionally clean) outputs and the noise bound.
struct DataSet
{
  Matrix u;                        ///< m x N
  std::optional<Matrix> y_clean;   ///< p x N
  Matrix y_noisy;                  ///< p x N
  double eps_bar = 0.0;
  std::uint64_t seed = 0;

  [[nodiscard]] int length() const noexcept { return static_cast<int>(u.cols()); }
  [[nodiscard]] int m() const noexcept { return static_cast<int>(u.rows()); }
  [[nodiscard]] int p() const noexcept { return static_cast<int>(y_noisy.rows()); }

  void validate() const
  {
    if (u.cols() < 1) { throw InvalidArgument("DataSet: N must be >= 1"); }
    if (y_noisy.cols() != u.cols()) { throw DimensionError("DataSet: input and output lengths differ"); }
    if (eps_bar < 0.0) { throw InvalidArgument("DataSet: eps_bar must be >= 0"); }
    if (y_clean) {
      if (y_clean->rows() != y_noisy.rows() || y_clean->cols() != y_noisy.cols()) {
        throw DimensionError("DataSet: clean and noisy outputs differ in shape");
      }
      if ((y_noisy - *y_clean).cwiseAbs().maxCoeff() > eps_bar) {
        throw InvalidArgument("DataSet: noise exceeds eps_bar");
      }
    }
  }
};

/// Hankel matrices of depth L + l over inputs and outputs.
struct HankelPair
{
  Matrix Hu;  ///< (L+l)m x (N-L-l+1)
  Matrix Hy;  ///< (L+l)p x (N-L-l+1)
  int horizon = 0;
  int window = 0;

  [[nodiscard]] Eigen::Index columns() const noexcept { return Hu.cols(); }
};

struct PeReport
{
  bool passes = false;
  double min_singular_value = 0.0;
  int rank = 0;
  int rows = 0;
};

/**
 * @brief Block Hankel matrix of depth L for a q x N sequence.
 *
 * Block (i, j) equals seq_{i+j}; the result is Lq x (N-L+1).
 */
inline Matrix hankel(const Matrix & seq, int depth)
{
  const auto q = seq.rows();
  const auto n = seq.cols();
  if (depth < 1) { throw InvalidArgument("hankel: depth must be >= 1"); }
  if (depth > n) { throw InsufficientDataError("hankel: depth exceeds sequence length"); }
  const auto cols = n - depth + 1;
  Matrix h(depth * q, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (int i = 0; i < depth; ++i) { h.block(i * q, j, q, 1) = seq.col(i + j); }
  }
  return h;
}

/// Full row rank test of hankel(u, order).
inline PeReport check_pe(const Matrix & u, int order, double rank_tol = kDefaultRankTolerance)
{
  if (order < 1) { throw InvalidArgument("check_pe: order must be >= 1"); }
  if (order > u.cols()) {
    throw InsufficientDataError("check_pe: " + std::to_string(u.cols()) + " samples cannot form a Hankel matrix of depth "
                                + std::to_string(order));
  }
  const Eigen::Index rows = order * u.rows();
  const Eigen::Index cols = u.cols() - order + 1;
  if (rows > cols) {
    throw InsufficientDataError("check_pe: Hankel matrix of order " + std::to_string(order) + " has " + std::to_string(rows)
                                + " rows but only " + std::to_string(cols) + " columns; at least "
                                + std::to_string(rows + order - 1) + " samples are needed");
  }
  const Vector s = linalg::singular_values(hankel(u, order));
  PeReport report;
  report.rows = static_cast<int>(rows);
  report.min_singular_value = s(s.size() - 1);
  report.rank = s(0) > 0.0 ? static_cast<int>((s.array() > rank_tol * s(0)).count()) : 0;
  report.passes = report.rank == rows;
  return report;
}

namespace detail {

/// Independent streams derived from one user seed.
enum class Stream : std::uint64_t { Input = 1, DataNoise = 2, LoopNoise = 3 };

inline std::mt19937_64 make_engine(std::uint64_t seed, Stream stream)
{
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

inline double uniform(std::mt19937_64 & engine, double lo, double hi)
{
  // Explicit mapping keeps sequences identical across standard libraries.
  const double unit = static_cast<double>(engine() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * unit;
}

}  // namespace detail

/// I.i.d. uniform samples in the box [lower, upper], m x N.
inline Matrix generate_pe_input(int n_samples, const Vector & lower, const Vector & upper, std::uint64_t seed)
{
  if (n_samples < 1) { throw InvalidArgument("generate_pe_input: N must be >= 1"); }
  if (lower.size() != upper.size() || lower.size() < 1) { throw DimensionError("generate_pe_input: bound size mismatch"); }
  if ((lower.array() > upper.array()).any() || !lower.allFinite() || !upper.allFinite()) {
    throw InvalidArgument("generate_pe_input: require finite lower <= upper");
  }
  auto engine = detail::make_engine(seed, detail::Stream::Input);
  Matrix u(lower.size(), n_samples);
  for (int k = 0; k < n_samples; ++k) {
    for (Eigen::Index i = 0; i < lower.size(); ++i) { u(i, k) = detail::uniform(engine, lower(i), upper(i)); }
  }
  return u;
}

/// Adds i.i.d. uniform noise in [-eps_bar, eps_bar] to every entry.
inline Matrix add_noise(const Matrix & y_clean, double eps_bar, std::uint64_t seed)
{
  if (eps_bar < 0.0) { throw InvalidArgument("add_noise: eps_bar must be >= 0"); }
  if (eps_bar == 0.0) { return y_clean; }
  auto engine = detail::make_engine(seed, detail::Stream::DataNoise);
  Matrix y = y_clean;
  for (Eigen::Index k = 0; k < y.cols(); ++k) {
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      y(i, k) += detail::uniform(engine, -eps_bar, eps_bar);
    }
  }
  return y;
}

/// Simulates the plant from rest under a sampled PE input and perturbs the outputs.
inline DataSet make_dataset(const LtiSystem & sys, int n_samples, const Vector & lower, const Vector & upper,
                            double eps_bar, std::uint64_t seed)
{
  DataSet data;
  data.u = generate_pe_input(n_samples, lower, upper, seed);
  Trajectory traj = simulate(sys, Vector::Zero(sys.n()), data.u);
  data.y_noisy = add_noise(traj.y, eps_bar, seed);
  data.y_clean = std::move(traj.y);
  data.eps_bar = eps_bar;
  data.seed = seed;
  return data;
}

inline HankelPair make_hankel_pair(const Matrix & u, const Matrix & y, int horizon, int window)
{
  if (u.cols() != y.cols()) { throw DimensionError("make_hankel_pair: input and output lengths differ"); }
  const int depth = horizon + window;
  return HankelPair{hankel(u, depth), hankel(y, depth), horizon, window};
}

/**
 * @brief Continue an initial window with the unique output of the data-generating system.
 *
 * Solves [Hu; Hy_past] alpha = [u_init; u_future; y_init] for the minimum-norm
 * alpha and returns Hy_future * alpha. Requires noise-free data that is
 * persistently exciting of order L + l + n.
 */
inline Matrix dd_simulate(const DataSet & data, int state_dim, const Matrix & u_init, const Matrix & y_init,
                          const Matrix & u_future)
{
  const int l = static_cast<int>(u_init.cols());
  const int horizon = static_cast<int>(u_future.cols());
  const int m = data.m();
  const int p = data.p();
  if (l < 1 || horizon < 1) { throw InvalidArgument("dd_simulate: empty window or horizon"); }
  if (y_init.cols() != l || u_init.rows() != m || y_init.rows() != p || u_future.rows() != m) {
    throw DimensionError("dd_simulate: window dimensions do not match the data");
  }
  if (data.eps_bar != 0.0) { throw InvalidArgument("dd_simulate: requires noise-free data"); }

  const PeReport pe = check_pe(data.u, horizon + l + state_dim);
  if (!pe.passes) { throw PersistencyError("dd_simulate: input data is not persistently exciting"); }

  const HankelPair h = make_hankel_pair(data.u, data.y_noisy, horizon, l);
  const Eigen::Index rows_u = static_cast<Eigen::Index>(horizon + l) * m;
  const Eigen::Index rows_yp = static_cast<Eigen::Index>(l) * p;

  Matrix constraint(rows_u + rows_yp, h.columns());
  constraint.topRows(rows_u) = h.Hu;
  constraint.bottomRows(rows_yp) = h.Hy.topRows(rows_yp);
  Vector rhs(rows_u + rows_yp);
  rhs.head(static_cast<Eigen::Index>(l) * m) = u_init.reshaped();
  rhs.segment(static_cast<Eigen::Index>(l) * m, static_cast<Eigen::Index>(horizon) * m) = u_future.reshaped();
  rhs.tail(rows_yp) = y_init.reshaped();

  Eigen::CompleteOrthogonalDecomposition<Matrix> cod(constraint);
  const Vector alpha = cod.solve(rhs);
  const double residual = (constraint * alpha - rhs).cwiseAbs().maxCoeff();
  const double scale = std::max(h.Hu.cwiseAbs().maxCoeff(), h.Hy.cwiseAbs().maxCoeff());
  if (residual > 1e-6 * (1.0 + scale)) {
    throw InconsistentWindowError("dd_simulate: initial window is not a trajectory of the system (residual "
                                  + std::to_string(residual) + ")");
  }
  const Vector y_future = h.Hy.bottomRows(static_cast<Eigen::Index>(horizon) * p) * alpha;
  return y_future.reshaped(p, horizon);
}

}  // namespace ddmpc
