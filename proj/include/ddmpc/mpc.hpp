#pragma once

/**
 * @file
 * @brief Data-driven MPC problems (nominal, robust, robust with terminal
 * equality) and the receding-horizon closed loop.
 *
 * Predicted trajectories are parametrized as ū = Hu α and ȳ = Hy α (- σ),
 * with Hankel matrices of depth L + l. Block rows [0, l) are the past window,
 * rows [l, L + l) the prediction over [0, L - 1].
 */

#include "ddmpc/behavior.hpp"
#include "ddmpc/qp.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ddmpc {

enum class Variant { Nominal, Robust, RobustTec };

inline std::string_view to_string(Variant v)
{
  switch (v) {
    case Variant::Nominal: return "Nominal";
    case Variant::Robust: return "Robust";
    case Variant::RobustTec: return "RobustTec";
  }
  return "Unknown";
}

inline Variant parse_variant(std::string_view name)
{
  if (name == "Nominal") { return Variant::Nominal; }
  if (name == "Robust") { return Variant::Robust; }
  if (name == "RobustTec") { return Variant::RobustTec; }
  throw InvalidArgument("unknown variant '" + std::string(name) + "'");
}

struct Setpoint
{
  Vector u;
  Vector y;
};

struct MpcConfig
{
  int L = 20;
  int l = 2;
  /// upper bound on the minimal state dimension, used for the PE order L + l + n (0: take l * p)
  int state_dim = 0;
  Matrix Q;
  Matrix R;
  double lambda_alpha_times_eps = 1e-2;
  double lambda_sigma_over_eps = 1e5;
  double eps_bar = 1e-3;
  Vector u_min;
  Vector u_max;
  Setpoint setpoint;
  Variant variant = Variant::Robust;
  int sim_length = 500;

  [[nodiscard]] int m() const noexcept { return static_cast<int>(R.rows()); }
  [[nodiscard]] int p() const noexcept { return static_cast<int>(Q.rows()); }
  [[nodiscard]] int state_bound() const noexcept { return state_dim > 0 ? state_dim : l * p(); }
  [[nodiscard]] int pe_order() const noexcept { return L + l + state_bound(); }

  void validate() const
  {
    if (L < 1 || l < 1) { throw InvalidArgument("MpcConfig: L and l must be >= 1"); }
    if (state_dim < 0) { throw InvalidArgument("MpcConfig: state_dim must be >= 0"); }
    if (sim_length < 1) { throw InvalidArgument("MpcConfig: sim_length must be >= 1"); }
    if (Q.rows() < 1 || Q.cols() != Q.rows() || R.rows() < 1 || R.cols() != R.rows()) {
      throw DimensionError("MpcConfig: Q and R must be square and non-empty");
    }
    for (const Matrix * w : {&Q, &R}) {
      if (!linalg::is_symmetric(*w, 1e-12 * std::max(1.0, w->cwiseAbs().maxCoeff()))
          || linalg::min_symmetric_eigenvalue(*w) <= 0.0) {
        throw InvalidArgument("MpcConfig: Q and R must be symmetric positive definite");
      }
    }
    if (u_min.size() != m() || u_max.size() != m() || setpoint.u.size() != m() || setpoint.y.size() != p()) {
      throw DimensionError("MpcConfig: bounds or setpoint have the wrong dimension");
    }
    if ((u_min.array() > setpoint.u.array()).any() || (setpoint.u.array() > u_max.array()).any()) {
      throw InvalidArgument("MpcConfig: require u_min <= u_s <= u_max");
    }
    if (eps_bar < 0.0) { throw InvalidArgument("MpcConfig: eps_bar must be >= 0"); }
    if (variant == Variant::Nominal && eps_bar != 0.0) { throw InvalidArgument("MpcConfig: Nominal requires eps_bar = 0"); }
    if (variant != Variant::Nominal) {
      if (eps_bar <= 0.0) { throw InvalidArgument("MpcConfig: robust variants require eps_bar > 0"); }
      if (!(lambda_alpha_times_eps > 0.0) || !(lambda_sigma_over_eps > 0.0)) {
        throw InvalidArgument("MpcConfig: regularization weights must be > 0");
      }
    }
    if (variant == Variant::RobustTec && L <= l) { throw InvalidArgument("MpcConfig: RobustTec requires L > l"); }
  }

  [[nodiscard]] double lambda_alpha() const { return lambda_alpha_times_eps / eps_bar; }
  [[nodiscard]] double lambda_sigma() const { return lambda_sigma_over_eps * eps_bar; }

  /// Same λ_α and λ_σ at another noise level: the weights λ_α ε̄ and λ_σ / ε̄ follow ε̄.
  [[nodiscard]] MpcConfig at_noise_level(double eps) const
  {
    if (!(eps > 0.0) || !(eps_bar > 0.0)) { throw InvalidArgument("MpcConfig::at_noise_level: noise levels must be > 0"); }
    MpcConfig c = *this;
    c.lambda_alpha_times_eps = lambda_alpha() * eps;
    c.lambda_sigma_over_eps = lambda_sigma() / eps;
    c.eps_bar = eps;
    return c;
  }
};

/// Hankel data shared by every problem of one run.
struct MpcProblemData
{
  HankelPair hankel;
  PeReport pe;
  int m = 0;
  int p = 0;

  [[nodiscard]] int L() const noexcept { return hankel.horizon; }
  [[nodiscard]] int l() const noexcept { return hankel.window; }
  [[nodiscard]] Eigen::Index columns() const noexcept { return hankel.columns(); }

  [[nodiscard]] auto Hu_past() const { return hankel.Hu.topRows(static_cast<Eigen::Index>(l()) * m); }
  [[nodiscard]] auto Hu_future() const { return hankel.Hu.bottomRows(static_cast<Eigen::Index>(L()) * m); }
  [[nodiscard]] auto Hy_past() const { return hankel.Hy.topRows(static_cast<Eigen::Index>(l()) * p); }
  [[nodiscard]] auto Hy_future() const { return hankel.Hy.bottomRows(static_cast<Eigen::Index>(L()) * p); }
};

inline MpcProblemData precompute(const DataSet & data, const MpcConfig & config)
{
  config.validate();
  data.validate();
  if (data.m() != config.m() || data.p() != config.p()) { throw DimensionError("precompute: data and config dimensions differ"); }
  const int order = config.pe_order();
  MpcProblemData pd;
  pd.pe = check_pe(data.u, order);
  if (!pd.pe.passes) {
    throw PersistencyError("precompute: input data is not persistently exciting of order " + std::to_string(order)
                           + " (rank " + std::to_string(pd.pe.rank) + " of " + std::to_string(pd.pe.rows) + ")");
  }
  const Matrix & y = (config.variant == Variant::Nominal && data.y_clean) ? *data.y_clean : data.y_noisy;
  if (config.variant == Variant::Nominal && !data.y_clean && data.eps_bar != 0.0) {
    throw InvalidArgument("precompute: Nominal needs noise-free outputs");
  }
  pd.hankel = make_hankel_pair(data.u, y, config.L, config.l);
  pd.m = data.m();
  pd.p = data.p();
  return pd;
}

namespace detail {

/// Quadratic stage cost Σ_k ‖Mu z - u_s‖_R² + ‖My z - y_s‖_Q² plus diag(reg) ‖z‖², in QP form.
inline void stage_cost(const MpcConfig & cfg, const Matrix & mu, const Matrix & my, const Vector & reg, QpProblem & qp)
{
  const int L = cfg.L;
  const auto m = cfg.m();
  const auto p = cfg.p();
  Matrix wu_mu(mu.rows(), mu.cols());
  Matrix wy_my(my.rows(), my.cols());
  Vector us(static_cast<Eigen::Index>(L) * m);
  Vector ys(static_cast<Eigen::Index>(L) * p);
  for (int k = 0; k < L; ++k) {
    wu_mu.middleRows(k * m, m) = cfg.R * mu.middleRows(k * m, m);
    wy_my.middleRows(k * p, p) = cfg.Q * my.middleRows(k * p, p);
    us.segment(k * m, m) = cfg.setpoint.u;
    ys.segment(k * p, p) = cfg.setpoint.y;
  }
  qp.P = 2.0 * (mu.transpose() * wu_mu + my.transpose() * wy_my);
  qp.P.diagonal() += 2.0 * reg;
  qp.P = 0.5 * (qp.P + qp.P.transpose());
  qp.q = -2.0 * (wu_mu.transpose() * us + wy_my.transpose() * ys);
}

inline void input_box(const MpcConfig & cfg, const Matrix & mu, QpProblem & qp)
{
  qp.A_box = mu;
  qp.lb = cfg.u_min.replicate(cfg.L, 1);
  qp.ub = cfg.u_max.replicate(cfg.L, 1);
}

inline void check_window(const MpcProblemData & pd, const ExtendedState & xi)
{
  if (xi.window != pd.l() || xi.m != pd.m || xi.p != pd.p || xi.xi.size() != static_cast<Eigen::Index>(pd.l()) * (pd.m + pd.p)) {
    throw DimensionError("MPC: extended state does not match the problem data");
  }
}

}  // namespace detail

/// z = α; equality rows pin the past window, box rows bound the predicted inputs.
inline QpProblem build_nominal(const MpcProblemData & pd, const MpcConfig & config, const ExtendedState & xi)
{
  if (config.variant != Variant::Nominal) { throw InvalidArgument("build_nominal: variant must be Nominal"); }
  config.validate();
  detail::check_window(pd, xi);
  QpProblem qp;
  detail::stage_cost(config, pd.Hu_future(), pd.Hy_future(), Vector::Zero(pd.columns()), qp);
  qp.A_eq.resize(pd.Hu_past().rows() + pd.Hy_past().rows(), pd.columns());
  qp.A_eq << pd.Hu_past(), pd.Hy_past();
  qp.b_eq = xi.xi;
  detail::input_box(config, pd.Hu_future(), qp);
  return qp;
}

/// z = (α, σ) with σ over all L + l output blocks and ȳ = Hy α - σ.
inline QpProblem build_robust(const MpcProblemData & pd, const MpcConfig & config, const ExtendedState & xi)
{
  if (config.variant == Variant::Nominal) { throw InvalidArgument("build_robust: variant must be Robust or RobustTec"); }
  config.validate();
  detail::check_window(pd, xi);
  const auto n_alpha = pd.columns();
  const auto n_sigma = static_cast<Eigen::Index>(pd.L() + pd.l()) * pd.p;
  const auto lm = static_cast<Eigen::Index>(pd.l()) * pd.m;
  const auto lp = static_cast<Eigen::Index>(pd.l()) * pd.p;
  const auto Lm = static_cast<Eigen::Index>(pd.L()) * pd.m;
  const auto Lp = static_cast<Eigen::Index>(pd.L()) * pd.p;
  const auto d = n_alpha + n_sigma;

  Matrix mu = Matrix::Zero(Lm, d);
  mu.leftCols(n_alpha) = pd.Hu_future();
  Matrix my = Matrix::Zero(Lp, d);
  my.leftCols(n_alpha) = pd.Hy_future();
  my.rightCols(Lp) = -Matrix::Identity(Lp, Lp);

  Vector reg(d);
  reg.head(n_alpha).setConstant(config.lambda_alpha_times_eps);
  reg.tail(n_sigma).setConstant(config.lambda_sigma_over_eps);

  QpProblem qp;
  detail::stage_cost(config, mu, my, reg, qp);
  qp.A_eq = Matrix::Zero(lm + lp, d);
  qp.A_eq.topLeftCorner(lm, n_alpha) = pd.Hu_past();
  qp.A_eq.bottomLeftCorner(lp, n_alpha) = pd.Hy_past();
  qp.A_eq.block(lm, n_alpha, lp, lp) = -Matrix::Identity(lp, lp);
  qp.b_eq = xi.xi;
  detail::input_box(config, mu, qp);
  return qp;
}

/// Appends rows holding the last l predicted steps at the setpoint equilibrium.
inline QpProblem add_terminal_equality(QpProblem qp, const MpcProblemData & pd, const MpcConfig & config)
{
  if (config.variant != Variant::RobustTec) { throw InvalidArgument("add_terminal_equality: variant must be RobustTec"); }
  const int L = pd.L();
  const int l = pd.l();
  if (L <= l) { throw InvalidArgument("add_terminal_equality: requires L > l"); }
  const auto n_alpha = pd.columns();
  const auto m = pd.m;
  const auto p = pd.p;
  if (qp.dim() != n_alpha + static_cast<Eigen::Index>(L + l) * p) {
    throw DimensionError("add_terminal_equality: expects a robust problem");
  }
  const auto rows = static_cast<Eigen::Index>(l) * (m + p);
  Matrix extra = Matrix::Zero(rows, qp.dim());
  Vector rhs(rows);
  for (int j = 0; j < l; ++j) {
    const int k = L - l + j;         // prediction index
    const int block = l + k;         // Hankel block row
    extra.block(j * m, 0, m, n_alpha) = pd.hankel.Hu.middleRows(static_cast<Eigen::Index>(block) * m, m);
    rhs.segment(j * m, m) = config.setpoint.u;
    const auto row = static_cast<Eigen::Index>(l) * m + static_cast<Eigen::Index>(j) * p;
    extra.block(row, 0, p, n_alpha) = pd.hankel.Hy.middleRows(static_cast<Eigen::Index>(block) * p, p);
    extra.block(row, n_alpha + static_cast<Eigen::Index>(block) * p, p, p) = -Matrix::Identity(p, p);
    rhs.segment(row, p) = config.setpoint.y;
  }
  Matrix a(qp.A_eq.rows() + rows, qp.dim());
  a << qp.A_eq, extra;
  Vector b(qp.b_eq.size() + rows);
  b << qp.b_eq, rhs;
  qp.A_eq = std::move(a);
  qp.b_eq = std::move(b);
  return qp;
}

inline QpProblem build_problem(const MpcProblemData & pd, const MpcConfig & config, const ExtendedState & xi)
{
  switch (config.variant) {
    case Variant::Nominal: return build_nominal(pd, config, xi);
    case Variant::Robust: return build_robust(pd, config, xi);
    case Variant::RobustTec: return add_terminal_equality(build_robust(pd, config, xi), pd, config);
  }
  throw InvalidArgument("build_problem: unknown variant");
}

struct MpcSolution
{
  Matrix u_bar;  ///< m x (L+l), columns over indices [-l, L-1]
  Matrix y_bar;  ///< p x (L+l)
  Vector alpha;
  Vector sigma;  ///< (L+l)p, zero for Nominal
  double J_star = 0.0;
  QpSolution qp;
  int window = 0;

  [[nodiscard]] bool solved() const noexcept { return qp.status == QpStatus::Solved; }
  /// ū_0, the input applied by the receding-horizon law
  [[nodiscard]] Vector first_input() const { return u_bar.col(window); }
};

/// Optimal cost recomputed from the trajectories (stage cost plus regularizers).
inline double mpc_cost(const MpcConfig & config, const MpcSolution & sol)
{
  double j = 0.0;
  for (int k = 0; k < config.L; ++k) {
    const Vector du = sol.u_bar.col(sol.window + k) - config.setpoint.u;
    const Vector dy = sol.y_bar.col(sol.window + k) - config.setpoint.y;
    j += du.dot(config.R * du) + dy.dot(config.Q * dy);
  }
  if (config.variant != Variant::Nominal) {
    j += config.lambda_alpha_times_eps * sol.alpha.squaredNorm() + config.lambda_sigma_over_eps * sol.sigma.squaredNorm();
  }
  return j;
}

/// Owns one QP whose structure is fixed; each step only replaces the window right-hand side.
class MpcController
{
public:
  MpcController(MpcProblemData data, MpcConfig config, QpSettings settings = {})
      : pd_(std::move(data)), config_(std::move(config)), settings_(settings)
  {
    config_.validate();
    settings_.validate();
  }

  [[nodiscard]] const MpcProblemData & data() const noexcept { return pd_; }
  [[nodiscard]] const MpcConfig & config() const noexcept { return config_; }

  MpcSolution solve(const ExtendedState & xi)
  {
    detail::check_window(pd_, xi);
    if (!solver_) {
      solver_.emplace(build_problem(pd_, config_, xi), settings_);
    } else {
      Vector b = solver_->problem().b_eq;
      b.head(xi.xi.size()) = xi.xi;
      solver_->update_b_eq(b);
    }
    MpcSolution sol;
    sol.qp = solver_->solve();
    sol.window = pd_.l();
    const auto n_alpha = pd_.columns();
    sol.alpha = sol.qp.z.head(n_alpha);
    const auto n_sigma = static_cast<Eigen::Index>(pd_.L() + pd_.l()) * pd_.p;
    sol.sigma = config_.variant == Variant::Nominal ? Vector::Zero(n_sigma) : Vector(sol.qp.z.tail(n_sigma));
    const Vector ub = pd_.hankel.Hu * sol.alpha;
    const Vector yb = pd_.hankel.Hy * sol.alpha - sol.sigma;
    sol.u_bar = ub.reshaped(pd_.m, pd_.L() + pd_.l());
    sol.y_bar = yb.reshaped(pd_.p, pd_.L() + pd_.l());
    sol.J_star = mpc_cost(config_, sol);
    return sol;
  }

private:
  MpcProblemData pd_;
  MpcConfig config_;
  QpSettings settings_;
  std::optional<QpSolver> solver_;
};

/// Past window handed to the controller at t = 0, and the plant state reached after it.
struct InitialWindow
{
  Matrix u;        ///< m x l
  Matrix y;        ///< p x l, true outputs
  Matrix y_tilde;  ///< p x l, measured outputs
  Vector x;        ///< plant state at t = 0
};

/// Simulates l steps from x0 under the constant input u_s; outputs are exact.
inline InitialWindow warm_up(const LtiSystem & sys, const Vector & x0, const Vector & u_s, int l)
{
  if (l < 1) { throw InvalidArgument("warm_up: l must be >= 1"); }
  const Matrix u = u_s.replicate(1, l);
  Trajectory traj = simulate(sys, x0, u);
  InitialWindow w;
  w.u = u;
  w.y = traj.y;
  w.y_tilde = traj.y;
  w.x = traj.x->col(l);
  return w;
}

struct StepRecord
{
  int t = 0;
  Vector u;
  Vector y;
  Vector y_tilde;
  double J_star = 0.0;
  double alpha_norm = 0.0;
  double sigma_norm = 0.0;
  int iterations = 0;
  QpStatus status = QpStatus::Solved;
  /// in-memory only
  Vector y_pred;
  KktResiduals kkt;
  double stationarity_scale = 0.0;
};

struct ClosedLoopLog
{
  std::vector<StepRecord> records;
  Variant variant = Variant::Robust;
  std::string config_digest;
  std::uint64_t seed = 0;
  InitialWindow init;
  bool aborted = false;

  [[nodiscard]] int length() const noexcept { return static_cast<int>(records.size()); }
  [[nodiscard]] bool all_solved() const
  {
    if (aborted) { return false; }
    for (const auto & r : records) {
      if (r.status != QpStatus::Solved) { return false; }
    }
    return true;
  }
};

/**
 * @brief Receding-horizon simulation.
 *
 * Produces records t = 0..T_sim (T_sim + 1 entries, so the closed-loop cost
 * over [0, T_sim] is defined). At every step the controller sees the last l
 * applied inputs and measured outputs, applies ū*_0 and the plant advances
 * one step. Robust variants measure y_t + e_t with e_t uniform in [-ε̄, ε̄],
 * drawn from the loop-noise stream of `seed`; the same stream also perturbs
 * the warm-up window. A failed QP ends the run with aborted set.
 */
inline ClosedLoopLog closed_loop(const LtiSystem & sys, const DataSet & data, const MpcConfig & config,
                                 const InitialWindow & init, std::uint64_t seed, const QpSettings & settings = {})
{
  config.validate();
  const int l = config.l;
  const int m = sys.m();
  const int p = sys.p();
  if (m != config.m() || p != config.p()) { throw DimensionError("closed_loop: system and config dimensions differ"); }
  if (init.u.rows() != m || init.u.cols() != l || init.y.rows() != p || init.y.cols() != l || init.x.size() != sys.n()) {
    throw DimensionError("closed_loop: initial window has the wrong shape");
  }

  MpcController controller(precompute(data, config), config, settings);
  auto engine = detail::make_engine(seed, detail::Stream::LoopNoise);
  const bool noisy = config.variant != Variant::Nominal && config.eps_bar > 0.0;
  auto measure = [&](const Vector & y) {
    Vector yt = y;
    if (noisy) {
      for (Eigen::Index i = 0; i < yt.size(); ++i) { yt(i) += detail::uniform(engine, -config.eps_bar, config.eps_bar); }
    }
    return yt;
  };

  ClosedLoopLog log;
  log.variant = config.variant;
  log.seed = seed;
  log.init = init;
  Matrix u_win = init.u;
  Matrix y_win(p, l);
  for (int k = 0; k < l; ++k) { y_win.col(k) = measure(init.y.col(k)); }
  log.init.y_tilde = y_win;

  Vector x = init.x;
  log.records.reserve(static_cast<std::size_t>(config.sim_length) + 1);
  for (int t = 0; t <= config.sim_length; ++t) {
    const MpcSolution sol = controller.solve(make_extended_state(u_win, y_win));
    StepRecord rec;
    rec.t = t;
    rec.status = sol.qp.status;
    rec.iterations = sol.qp.iterations;
    rec.kkt = sol.qp.kkt;
    rec.stationarity_scale = sol.qp.stationarity_scale;
    if (!sol.solved()) {
      log.aborted = true;
      log.records.push_back(std::move(rec));
      break;
    }
    rec.u = sol.first_input();
    rec.y = sys.C() * x + sys.D() * rec.u;
    rec.y_tilde = measure(rec.y);
    rec.y_pred = sol.y_bar.col(l);
    rec.J_star = sol.J_star;
    rec.alpha_norm = sol.alpha.norm();
    rec.sigma_norm = sol.sigma.norm();

    if (l > 1) {
      u_win.leftCols(l - 1) = u_win.rightCols(l - 1).eval();
      y_win.leftCols(l - 1) = y_win.rightCols(l - 1).eval();
    }
    u_win.col(l - 1) = rec.u;
    y_win.col(l - 1) = rec.y_tilde;
    x = sys.A() * x + sys.B() * rec.u;
    log.records.push_back(std::move(rec));
  }
  return log;
}

}  // namespace ddmpc
