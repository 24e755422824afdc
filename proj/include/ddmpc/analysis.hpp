#pragma once

/**
 * @file
 * @brief Closed-loop metrics, the IOSS certificate of the extended system,
 * Lyapunov-style monitoring and the noise-scaling study.
 */

#include "ddmpc/mpc.hpp"

#include <cmath>
#include <complex>
#include <limits>
#include <optional>
#include <vector>

namespace ddmpc {

class NotDetectableError : public Error
{
public:
  using Error::Error;
};

class CertificateSearchError : public Error
{
public:
  using Error::Error;
};

/// Σ_{t=0}^{T} ‖u_t - u_s‖_R² + ‖y_t - y_s‖_Q² over the true outputs.
inline double closed_loop_cost(const ClosedLoopLog & log, const Setpoint & sp, const Matrix & Q, const Matrix & R, int T)
{
  if (T < 0) { throw InvalidArgument("closed_loop_cost: T must be >= 0"); }
  if (log.length() < T + 1) {
    throw InvalidArgument("closed_loop_cost: log has " + std::to_string(log.length()) + " records, need "
                          + std::to_string(T + 1));
  }
  double cost = 0.0;
  for (int t = 0; t <= T; ++t) {
    const auto & r = log.records[static_cast<std::size_t>(t)];
    if (r.u.size() != R.rows() || r.y.size() != Q.rows()) { throw DimensionError("closed_loop_cost: record dimensions"); }
    const Vector du = r.u - sp.u;
    const Vector dy = r.y - sp.y;
    cost += du.dot(R * du) + dy.dot(Q * dy);
  }
  return cost;
}

/// Σ_{t=0}^{T-1} ‖u_{t+1} - u_t‖_1
inline double input_total_variation(const ClosedLoopLog & log, int T)
{
  if (log.length() < T + 1) { throw InvalidArgument("input_total_variation: log too short"); }
  double tv = 0.0;
  for (int t = 0; t < T; ++t) {
    tv += (log.records[static_cast<std::size_t>(t + 1)].u - log.records[static_cast<std::size_t>(t)].u).lpNorm<1>();
  }
  return tv;
}

// ---------------------------------------------------------------------------
// IOSS: W(ξ) = ξ' P ξ with W(ξ+) - W(ξ) <= -ε ‖ξ‖² + ‖u‖_R² + ‖y‖_Q²

struct IossCertificate
{
  Matrix P;
  double eps = 0.0;
};

struct IossCheck
{
  bool passes = false;
  double max_eigenvalue = 0.0;
};

inline constexpr double kIossTolerance = 1e-10;

/// Matrix M of the quadratic form in (ξ, u) whose negativity is the dissipation inequality.
inline Matrix ioss_form(const ExtendedLti & ext, const Matrix & Q, const Matrix & R, const IossCertificate & cert)
{
  const auto n = ext.A.rows();
  const auto m = ext.B.cols();
  if (cert.P.rows() != n || cert.P.cols() != n || Q.rows() != ext.C.rows() || R.rows() != m) {
    throw DimensionError("ioss_form: dimension mismatch");
  }
  Matrix M(n + m, n + m);
  M.topLeftCorner(n, n) = ext.A.transpose() * cert.P * ext.A - cert.P - ext.C.transpose() * Q * ext.C;
  M.topLeftCorner(n, n).diagonal().array() += cert.eps;
  M.topRightCorner(n, m) = ext.A.transpose() * cert.P * ext.B - ext.C.transpose() * Q * ext.D;
  M.bottomLeftCorner(m, n) = M.topRightCorner(n, m).transpose();
  M.bottomRightCorner(m, m) = ext.B.transpose() * cert.P * ext.B - R - ext.D.transpose() * Q * ext.D;
  return 0.5 * (M + M.transpose());
}

inline IossCheck verify_ioss_certificate(const ExtendedLti & ext, const Matrix & Q, const Matrix & R, const IossCertificate & cert)
{
  IossCheck check;
  check.max_eigenvalue = linalg::max_symmetric_eigenvalue(ioss_form(ext, Q, R, cert));
  check.passes = check.max_eigenvalue <= kIossTolerance;
  return check;
}

/// PBH test: every eigenvalue with |λ| >= 1 must be observable through C.
inline bool is_detectable(const Matrix & A, const Matrix & C, double rank_tol = kDefaultRankTolerance)
{
  using Complex = Eigen::MatrixXcd;
  const auto n = A.rows();
  const Eigen::VectorXcd eig = Eigen::EigenSolver<Matrix>(A, false).eigenvalues();
  for (Eigen::Index i = 0; i < eig.size(); ++i) {
    if (std::abs(eig(i)) < 1.0 - 1e-12) { continue; }
    Complex pbh(n + C.rows(), n);
    pbh.topRows(n) = eig(i) * Complex::Identity(n, n) - A.cast<std::complex<double>>();
    pbh.bottomRows(C.rows()) = C.cast<std::complex<double>>();
    const Eigen::VectorXd s = Eigen::BDCSVD<Complex>(pbh).singularValues();
    const double scale = std::max(1.0, s(0));
    if ((s.array() > rank_tol * scale).count() < n) { return false; }
  }
  return true;
}

namespace detail {

/// Observer gain from the filter Riccati recursion on (A / r, C); F = A - G C then has its
/// observable modes inside radius r.
inline std::optional<Matrix> observer_gain(const Matrix & A, const Matrix & C, double r)
{
  const auto n = A.rows();
  const auto p = C.rows();
  const Matrix As = A / r;
  Matrix X = Matrix::Identity(n, n);
  for (int it = 0; it < 20000; ++it) {
    const Matrix S = C * X * C.transpose() + Matrix::Identity(p, p);
    const Matrix K = As * X * C.transpose() * S.ldlt().solve(Matrix::Identity(p, p));
    Matrix next = As * X * As.transpose() - K * C * X * As.transpose() + Matrix::Identity(n, n);
    next = 0.5 * (next + next.transpose());
    if (!next.allFinite()) { return std::nullopt; }
    const double change = (next - X).cwiseAbs().maxCoeff();
    X = std::move(next);
    if (change <= 1e-13 * std::max(1.0, X.cwiseAbs().maxCoeff())) { break; }
  }
  const Matrix S = C * X * C.transpose() + Matrix::Identity(p, p);
  const Matrix G = A * X * C.transpose() * S.ldlt().solve(Matrix::Identity(p, p));
  if (!G.allFinite() || linalg::spectral_radius(A - G * C) >= 1.0) { return std::nullopt; }
  return G;
}

}  // namespace detail

/**
 * @brief Quadratic IOSS Lyapunov function for the extended system.
 *
 * With an observer gain G and F = Ã - G C̃ Schur, the update reads
 * ξ+ = F ξ + G y + (B̃ - G D̃) u. P0 solves F' P0 F - P0 = -I, and for a small
 * enough scale s the function s ξ' P0 ξ dissipates against the stage cost.
 * The scale starts from an analytic bound, is halved until the exact check
 * passes, and ε is then enlarged by bisection and halved for margin.
 */
inline IossCertificate build_ioss_certificate(const ExtendedLti & ext, const Matrix & Q, const Matrix & R)
{
  const auto n = ext.A.rows();
  if (Q.rows() != ext.C.rows() || R.rows() != ext.B.cols()) { throw DimensionError("build_ioss_certificate: weight dimensions"); }
  if (linalg::min_symmetric_eigenvalue(Q) <= 0.0 || linalg::min_symmetric_eigenvalue(R) <= 0.0) {
    throw InvalidArgument("build_ioss_certificate: Q and R must be positive definite");
  }
  if (!is_detectable(ext.A, ext.C)) { throw NotDetectableError("build_ioss_certificate: (A, C) is not detectable"); }

  std::optional<Matrix> gain;
  for (double r : {0.5, 0.7, 0.9, 0.99, 0.999}) {
    if ((gain = detail::observer_gain(ext.A, ext.C, r))) { break; }
  }
  if (!gain) { throw CertificateSearchError("build_ioss_certificate: no stabilizing observer gain found"); }
  const Matrix & G = *gain;
  const Matrix F = ext.A - G * ext.C;
  const Matrix P0 = linalg::solve_discrete_lyapunov(F, Matrix::Identity(n, n));

  // s ≤ λ_min(R, Q) / (2 (2 ‖F'P0‖² + ‖P0‖) max(‖G‖², ‖B̃ - G D̃‖²)) makes the cross terms
  // dominated by half of the -s‖ξ‖² decrease and the stage cost.
  const auto norm2 = [](const Matrix & a) { return a.size() ? linalg::singular_values(a)(0) : 0.0; };
  const double k = 2.0 * std::pow(norm2(F.transpose() * P0), 2) + norm2(P0);
  const double c = 2.0 * std::max(std::pow(norm2(G), 2), std::pow(norm2(ext.B - G * ext.D), 2));
  const double lam = std::min(linalg::min_symmetric_eigenvalue(Q), linalg::min_symmetric_eigenvalue(R));
  double s = lam / std::max(k * c, 1e-300);

  for (int halving = 0; halving < 200; ++halving, s *= 0.5) {
    IossCertificate cert{s * P0, 1e-12};
    // demand a strict margin so the returned pair is robust to rounding
    auto passes = [&](double eps) {
      cert.eps = eps;
      return verify_ioss_certificate(ext, Q, R, cert).max_eigenvalue <= -kIossTolerance;
    };
    if (!passes(1e-12)) { continue; }
    double lo = 1e-12;
    double hi = std::max(lam, s);
    if (passes(hi)) { lo = hi; }
    for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (passes(mid) ? lo : hi) = mid;
    }
    cert.eps = 0.5 * lo;
    return cert;
  }
  throw CertificateSearchError("build_ioss_certificate: scale bisection exhausted its range");
}

// ---------------------------------------------------------------------------
// Lyapunov monitoring

struct TracePoint
{
  int t = 0;
  double J_star = 0.0;
  std::optional<double> W;
  std::optional<double> Y;
};

struct LyapunovTrace
{
  std::vector<TracePoint> points;
  /// level of the final plateau, max(0, max over the final 10% of the monitored value)
  double offset = 0.0;
  /// first index from which every step decreases or stays below the offset (-1: none)
  int monotone_from = -1;

  /// Y when available, otherwise J*.
  [[nodiscard]] double value(std::size_t i) const { return points[i].Y ? *points[i].Y : points[i].J_star; }
};

/// True extended state (past l applied inputs and true outputs) before record t.
inline ExtendedState true_window(const ClosedLoopLog & log, int t)
{
  const auto l = static_cast<int>(log.init.u.cols());
  const auto m = log.init.u.rows();
  const auto p = log.init.y.rows();
  Matrix u(m, l);
  Matrix y(p, l);
  for (int k = 0; k < l; ++k) {
    const int s = t - l + k;
    if (s < 0) {
      u.col(k) = log.init.u.col(l + s);
      y.col(k) = log.init.y.col(l + s);
    } else {
      u.col(k) = log.records[static_cast<std::size_t>(s)].u;
      y.col(k) = log.records[static_cast<std::size_t>(s)].y;
    }
  }
  return make_extended_state(u, y);
}

inline LyapunovTrace lyapunov_trace(const ClosedLoopLog & log, const std::optional<IossCertificate> & cert = std::nullopt,
                                    const std::optional<Setpoint> & setpoint = std::nullopt)
{
  LyapunovTrace trace;
  std::size_t usable = 0;
  while (usable < log.records.size() && log.records[usable].status == QpStatus::Solved) { ++usable; }
  Vector xi_s;
  if (cert && setpoint) {
    const auto l = static_cast<int>(log.init.u.cols());
    xi_s.resize(l * (setpoint->u.size() + setpoint->y.size()));
    xi_s << setpoint->u.replicate(l, 1), setpoint->y.replicate(l, 1);
  }
  for (std::size_t i = 0; i < usable; ++i) {
    TracePoint pt;
    pt.t = log.records[i].t;
    pt.J_star = log.records[i].J_star;
    if (cert && setpoint && log.init.u.cols() > 0) {
      const Vector d = true_window(log, static_cast<int>(i)).xi - xi_s;
      if (d.size() == cert->P.rows()) {
        pt.W = d.dot(cert->P * d);
        pt.Y = pt.J_star + *pt.W;
      }
    }
    trace.points.push_back(pt);
  }
  if (trace.points.empty()) { return trace; }

  const std::size_t n = trace.points.size();
  const std::size_t tail = std::max<std::size_t>(1, n / 10);
  double plateau = 0.0;
  for (std::size_t i = n - tail; i < n; ++i) { plateau = std::max(plateau, trace.value(i)); }
  trace.offset = std::max(0.0, plateau);

  int from = 0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double v = trace.value(i);
    const double next = trace.value(i + 1);
    if (next > std::max(v, trace.offset) + 1e-9 * (1.0 + std::abs(v))) { from = static_cast<int>(i) + 1; }
  }
  trace.monotone_from = from;
  return trace;
}

// ---------------------------------------------------------------------------
// Noise scaling of the one-step prediction error

struct PredictionErrorRow
{
  double eps_bar = 0.0;
  double mean_error = 0.0;
};

struct PredictionErrorStudy
{
  std::vector<PredictionErrorRow> rows;
  bool strictly_decreasing = false;
};

/// Mean over steps of ‖y_t - ȳ*_0(t)‖, where ȳ*_0 is the optimizer's prediction of the output it is about to see.
inline double mean_prediction_error(const ClosedLoopLog & log)
{
  double sum = 0.0;
  int count = 0;
  for (const auto & r : log.records) {
    if (r.status != QpStatus::Solved) { break; }
    sum += (r.y - r.y_pred).norm();
    ++count;
  }
  if (count == 0) { throw InvalidArgument("mean_prediction_error: empty log"); }
  return sum / count;
}

struct PredictionStudySetup
{
  int N = 200;
  Vector input_lower;
  Vector input_upper;
  Vector x0;
  int steps = 50;
  std::vector<std::uint64_t> seeds{0};
};

/**
 * For each ε̄ in the grid: fresh data at that noise level (one data set per seed),
 * a short closed loop with λ_α and λ_σ of `config` held fixed, and the mean one-step
 * prediction error averaged over seeds. ε̄ = 0 runs the nominal scheme on clean data.
 */
inline PredictionErrorStudy prediction_error_study(const LtiSystem & sys, const std::vector<double> & grid,
                                                   const MpcConfig & config, const PredictionStudySetup & setup)
{
  if (grid.empty() || setup.seeds.empty()) { throw InvalidArgument("prediction_error_study: empty grid or seed list"); }
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.0 || (i > 0 && !(grid[i] < grid[i - 1]))) {
      throw InvalidArgument("prediction_error_study: grid must be non-negative and strictly descending");
    }
  }
  PredictionErrorStudy study;
  for (double eps : grid) {
    MpcConfig cfg = config;
    if (eps > 0.0) {
      if (cfg.variant == Variant::Nominal) { throw InvalidArgument("prediction_error_study: base config must be robust"); }
      cfg = cfg.at_noise_level(eps);
    } else {
      cfg.variant = Variant::Nominal;
      cfg.eps_bar = 0.0;
    }
    cfg.sim_length = setup.steps;
    double total = 0.0;
    for (auto seed : setup.seeds) {
      const DataSet data = make_dataset(sys, setup.N, setup.input_lower, setup.input_upper, eps, seed);
      const InitialWindow init = warm_up(sys, setup.x0, cfg.setpoint.u, cfg.l);
      const ClosedLoopLog log = closed_loop(sys, data, cfg, init, seed);
      if (!log.all_solved()) { throw Error("prediction_error_study: closed loop aborted"); }
      total += mean_prediction_error(log);
    }
    study.rows.push_back({eps, total / static_cast<double>(setup.seeds.size())});
  }
  study.strictly_decreasing = true;
  for (std::size_t i = 1; i < study.rows.size(); ++i) {
    if (!(study.rows[i].mean_error < study.rows[i - 1].mean_error)) { study.strictly_decreasing = false; }
  }
  return study;
}

// ---------------------------------------------------------------------------
// Scheme comparison

struct ComparisonReport
{
  double cost_a = 0.0;
  double cost_b = 0.0;
  /// (cost_b - cost_a) / cost_a
  double relative_gap = 0.0;
  double input_total_variation_a = 0.0;
  double input_total_variation_b = 0.0;
  double final_tracking_error_a = 0.0;
  double final_tracking_error_b = 0.0;
  int horizon = 0;
};

inline double tracking_error(const ClosedLoopLog & log, const Setpoint & sp, int t)
{
  return (log.records[static_cast<std::size_t>(t)].y - sp.y).lpNorm<Eigen::Infinity>();
}

inline ComparisonReport compare_runs(const ClosedLoopLog & a, const ClosedLoopLog & b, const Setpoint & sp, const Matrix & Q,
                                     const Matrix & R, int T)
{
  if (a.length() < T + 1 || b.length() < T + 1) {
    throw InvalidArgument("compare_runs: both logs need at least " + std::to_string(T + 1) + " records");
  }
  ComparisonReport rep;
  rep.horizon = T;
  rep.cost_a = closed_loop_cost(a, sp, Q, R, T);
  rep.cost_b = closed_loop_cost(b, sp, Q, R, T);
  if (rep.cost_a == 0.0) {
    rep.relative_gap = rep.cost_b == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  } else {
    rep.relative_gap = (rep.cost_b - rep.cost_a) / rep.cost_a;
  }
  rep.input_total_variation_a = input_total_variation(a, T);
  rep.input_total_variation_b = input_total_variation(b, T);
  rep.final_tracking_error_a = tracking_error(a, sp, T);
  rep.final_tracking_error_b = tracking_error(b, sp, T);
  return rep;
}

}  // namespace ddmpc
