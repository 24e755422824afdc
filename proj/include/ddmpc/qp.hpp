#pragma once

/**
 * @file
 * @brief Convex QP solver for
 *
 *   min 0.5 z'Pz + q'z  s.t.  A_eq z = b_eq,  lb <= A_box z <= ub.
 *
 * Operator splitting on the box rows; the equality rows stay inside the
 * linear-system step, whose factorization is computed once and reused across
 * iterations and across solves that only change b_eq or the bounds. Converged
 * iterates are polished by solving the KKT system on the detected active set.
 */

#include "ddmpc/linalg.hpp"

#include <limits>
#include <optional>
#include <string_view>
#include <vector>

namespace ddmpc {

struct QpProblem
{
  Matrix P;      ///< d x d, symmetric positive semidefinite
  Vector q;      ///< d
  Matrix A_eq;   ///< e x d
  Vector b_eq;   ///< e
  Matrix A_box;  ///< r x d
  Vector lb;     ///< r, may hold -inf
  Vector ub;     ///< r, may hold +inf

  [[nodiscard]] int dim() const noexcept { return static_cast<int>(q.size()); }
  [[nodiscard]] int num_eq() const noexcept { return static_cast<int>(b_eq.size()); }
  [[nodiscard]] int num_box() const noexcept { return static_cast<int>(lb.size()); }

  void validate() const
  {
    const auto d = q.size();
    if (P.rows() != d || P.cols() != d) { throw DimensionError("QpProblem: P must be d x d"); }
    if (A_eq.cols() != d || A_eq.rows() != b_eq.size()) { throw DimensionError("QpProblem: A_eq/b_eq mismatch"); }
    if (A_box.cols() != d || A_box.rows() != lb.size() || ub.size() != lb.size()) {
      throw DimensionError("QpProblem: A_box/lb/ub mismatch");
    }
    if (!linalg::is_symmetric(P, 1e-12 * std::max(1.0, P.cwiseAbs().maxCoeff()))) {
      throw InvalidArgument("QpProblem: P is not symmetric");
    }
    if ((lb.array() > ub.array()).any()) { throw InvalidArgument("QpProblem: lb > ub"); }
    if (!P.allFinite() || !q.allFinite() || !A_eq.allFinite() || !b_eq.allFinite() || !A_box.allFinite()) {
      throw InvalidArgument("QpProblem: non-finite data");
    }
  }
};

struct QpSettings
{
  double eps_abs = 1e-8;
  double eps_rel = 1e-8;
  int max_iter = 20000;
  double rho = 0.1;
  double sigma = 1e-6;
  /// over-relaxation
  double alpha = 1.6;
  /// iterations between step-size updates (0 disables)
  int adaptive_rho_interval = 50;
  int check_interval = 25;
  bool polish = true;
  bool scaling = true;
  int scaling_iter = 10;
  /// ridge added to a singular P, relative to trace(P)/d
  double ridge_relative = 1e-10;

  void validate() const
  {
    if (!(eps_abs > 0.0) || !(eps_rel > 0.0)) { throw InvalidArgument("QpSettings: tolerances must be > 0"); }
    if (max_iter < 1) { throw InvalidArgument("QpSettings: max_iter must be >= 1"); }
    if (!(rho > 0.0) || !(sigma > 0.0)) { throw InvalidArgument("QpSettings: rho and sigma must be > 0"); }
    if (!(alpha > 0.0 && alpha < 2.0)) { throw InvalidArgument("QpSettings: alpha must lie in (0, 2)"); }
    if (check_interval < 1) { throw InvalidArgument("QpSettings: check_interval must be >= 1"); }
  }
};

enum class QpStatus { Solved, MaxIter, Infeasible };

inline std::string_view to_string(QpStatus status)
{
  switch (status) {
    case QpStatus::Solved: return "Solved";
    case QpStatus::MaxIter: return "MaxIter";
    case QpStatus::Infeasible: return "Infeasible";
  }
  return "Unknown";
}

/// Max-norm KKT residuals.
struct KktResiduals
{
  double stationarity = 0.0;
  double primal_eq = 0.0;
  double primal_box = 0.0;
  double comp_slack = 0.0;
};

struct QpSolution
{
  Vector z;
  Vector dual_eq;
  Vector dual_box;
  double objective = std::numeric_limits<double>::quiet_NaN();
  QpStatus status = QpStatus::MaxIter;
  int iterations = 0;
  double primal_residual = std::numeric_limits<double>::infinity();
  double dual_residual = std::numeric_limits<double>::infinity();
  KktResiduals kkt;
  /// scale used by the relative stationarity tolerance
  double stationarity_scale = 0.0;
  /// diagonal ridge that was added to P (zero when P was already definite)
  double ridge = 0.0;
  bool polished = false;
};

/**
 * @brief KKT residuals of (z, dual_eq, dual_box).
 *
 * Sign convention: P z + q + A_eq' dual_eq + A_box' dual_box = 0, with
 * dual_box > 0 on upper-active rows and < 0 on lower-active rows. The
 * complementarity residual also absorbs dual sign violations.
 */
inline KktResiduals kkt_residuals(const QpProblem & problem, const Vector & z, const Vector & dual_eq,
                                  const Vector & dual_box)
{
  if (z.size() != problem.dim() || dual_eq.size() != problem.num_eq() || dual_box.size() != problem.num_box()) {
    throw DimensionError("kkt_residuals: dimension mismatch");
  }
  KktResiduals res;
  const Vector grad = problem.P * z + problem.q + problem.A_eq.transpose() * dual_eq + problem.A_box.transpose() * dual_box;
  res.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
  res.primal_eq = problem.num_eq() ? (problem.A_eq * z - problem.b_eq).cwiseAbs().maxCoeff() : 0.0;

  const Vector a = problem.A_box * z;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double lo = problem.lb(i);
    const double hi = problem.ub(i);
    res.primal_box = std::max({res.primal_box, lo - a(i), a(i) - hi});
    const double y = dual_box(i);
    double slack = 0.0;
    if (y > 0.0) { slack = std::isfinite(hi) ? y * std::abs(hi - a(i)) : y; }
    if (y < 0.0) { slack = std::isfinite(lo) ? -y * std::abs(a(i) - lo) : -y; }
    res.comp_slack = std::max(res.comp_slack, slack);
  }
  return res;
}

inline double qp_objective(const QpProblem & problem, const Vector & z)
{
  return 0.5 * z.dot(problem.P * z) + problem.q.dot(z);
}

/**
 * @brief Reusable solver instance.
 *
 * Owns the scaled problem, the cached factorizations and the last iterates,
 * which warm-start the next call to solve(). Not safe to share across threads
 * during a solve; distinct instances are independent.
 */
class QpSolver
{
public:
  explicit QpSolver(QpProblem problem, QpSettings settings = {}) : problem_(std::move(problem)), settings_(settings)
  {
    problem_.validate();
    settings_.validate();
    add_ridge_if_singular();
    select_independent_equalities();
    compute_scaling();
    build_scaled_problem();
    init_rho();
    factor();
    reset_iterates();
  }

  [[nodiscard]] const QpProblem & problem() const noexcept { return problem_; }
  [[nodiscard]] const QpSettings & settings() const noexcept { return settings_; }
  [[nodiscard]] double ridge() const noexcept { return ridge_; }

  /// Replace b_eq; the factorization is kept.
  void update_b_eq(const Vector & b_eq)
  {
    if (b_eq.size() != problem_.num_eq()) { throw DimensionError("QpSolver::update_b_eq: size mismatch"); }
    problem_.b_eq = b_eq;
    b_s_ = eq_scale_.asDiagonal() * b_eq;
  }

  /// Replace box bounds; the factorization is kept unless row types change.
  void update_bounds(const Vector & lb, const Vector & ub)
  {
    if (lb.size() != problem_.num_box() || ub.size() != problem_.num_box()) {
      throw DimensionError("QpSolver::update_bounds: size mismatch");
    }
    if ((lb.array() > ub.array()).any()) { throw InvalidArgument("QpSolver::update_bounds: lb > ub"); }
    problem_.lb = lb;
    problem_.ub = ub;
    lb_s_ = box_scale_.asDiagonal() * lb;
    ub_s_ = box_scale_.asDiagonal() * ub;
    const Vector old_rho = rho_vec_;
    init_rho();
    if (old_rho != rho_vec_) { factor(); }
  }

  /// Start the next solve from an unscaled primal/dual guess.
  void warm_start(const Vector & z, const Vector & dual_box)
  {
    if (z.size() != problem_.dim() || dual_box.size() != problem_.num_box()) {
      throw DimensionError("QpSolver::warm_start: size mismatch");
    }
    x_ = var_scale_.cwiseInverse().asDiagonal() * z;
    zc_ = (A_box_s_ * x_).cwiseMax(lb_s_).cwiseMin(ub_s_);
    y_ = cost_scale_ * (box_scale_.cwiseInverse().asDiagonal() * dual_box);
    warm_ = true;
  }

  void reset_iterates()
  {
    x_ = Vector::Zero(problem_.dim());
    zc_ = Vector::Zero(problem_.num_box()).cwiseMax(lb_s_).cwiseMin(ub_s_);
    y_ = Vector::Zero(problem_.num_box());
    warm_ = false;
  }

  QpSolution solve()
  {
    QpSolution best;
    best.ridge = ridge_;

    if (!equalities_consistent()) {
      best.status = QpStatus::Infeasible;
      best.z = var_scale_.asDiagonal() * x_;
      fill_diagnostics(best);
      return best;
    }

    const int stall_limit = static_cast<int>(10.0 * std::sqrt(static_cast<double>(settings_.max_iter)));
    double best_primal = std::numeric_limits<double>::infinity();
    int stall = 0;
    std::vector<signed char> last_active;
    std::vector<signed char> failed_polish_active;
    Vector nu = Vector::Zero(eq_rows_.size());

    if (warm_ && settings_.polish) {
      auto active = active_set();
      if (auto polished = try_polish(active)) {
        polished->iterations = 0;
        accept(*polished);
        return *polished;
      }
      failed_polish_active = std::move(active);
    }

    Vector rhs(problem_.dim() + eq_rows_.size());
    Vector y_prev = y_;
    Vector nu_prev = nu;
    int iter = 0;
    while (iter < settings_.max_iter) {
      ++iter;
      // x-step: equality-constrained proximal subproblem
      rhs.head(problem_.dim()) = settings_.sigma * x_ - q_s_ + A_box_s_.transpose() * (rho_vec_.cwiseProduct(zc_) - y_);
      rhs.tail(eq_rows_.size()) = b_s_(eq_rows_);
      const Vector sol = kkt_lu_.solve(rhs);
      const Vector x_tilde = sol.head(problem_.dim());
      nu = sol.tail(eq_rows_.size());
      const Vector z_tilde = A_box_s_ * x_tilde;

      x_ = settings_.alpha * x_tilde + (1.0 - settings_.alpha) * x_;
      const Vector z_relaxed = settings_.alpha * z_tilde + (1.0 - settings_.alpha) * zc_;
      const Vector z_next = (z_relaxed + rho_vec_.cwiseInverse().cwiseProduct(y_)).cwiseMax(lb_s_).cwiseMin(ub_s_);
      y_ += rho_vec_.cwiseProduct(z_relaxed - z_next);
      zc_ = z_next;

      const bool check = iter % settings_.check_interval == 0 || iter == settings_.max_iter;
      if (check) {
        QpSolution current = unscaled_iterate(nu);
        current.iterations = iter;
        if (is_certified(current)) {
          if (settings_.polish) {
            if (auto polished = try_polish(active_set())) {
              polished->iterations = iter;
              accept(*polished);
              return *polished;
            }
          }
          current.status = QpStatus::Solved;
          accept(current);
          return current;
        }

        if (settings_.polish) {
          auto active = active_set();
          if (active == last_active && active != failed_polish_active) {
            if (auto polished = try_polish(active)) {
              polished->iterations = iter;
              accept(*polished);
              return *polished;
            }
            failed_polish_active = active;
          }
          last_active = std::move(active);
        }

        if (current.primal_residual < 0.99 * best_primal) {
          best_primal = current.primal_residual;
          stall = 0;
        } else {
          stall += settings_.check_interval;
        }
        best = std::move(current);
        if (stall >= stall_limit && best.primal_residual > settings_.eps_abs) {
          if (infeasibility_certificate(y_ - y_prev, nu - nu_prev)) {
            best.status = QpStatus::Infeasible;
            warm_ = true;
            return best;
          }
          stall = 0;
        }
        y_prev = y_;
        nu_prev = nu;
      }

      if (settings_.adaptive_rho_interval > 0 && iter % settings_.adaptive_rho_interval == 0) { adapt_rho(nu); }
    }
    best.status = QpStatus::MaxIter;
    warm_ = true;
    return best;
  }

private:
  QpProblem problem_;
  QpSettings settings_;
  double ridge_ = 0.0;
  std::vector<Eigen::Index> eq_rows_;
  Eigen::CompleteOrthogonalDecomposition<Matrix> eq_cod_;

  Vector var_scale_, eq_scale_, box_scale_;
  double cost_scale_ = 1.0;
  Matrix P_s_, A_eq_s_, A_box_s_;
  Vector q_s_, b_s_, lb_s_, ub_s_;

  Vector rho_vec_;
  double rho_ = 0.1;
  Eigen::PartialPivLU<Matrix> kkt_lu_;

  Vector x_, zc_, y_;
  bool warm_ = false;

  std::vector<signed char> polish_active_;
  std::optional<Eigen::PartialPivLU<Matrix>> polish_lu_;
  Matrix polish_kkt_;

  static constexpr double kRhoMin = 1e-6;
  static constexpr double kRhoMax = 1e6;
  static constexpr double kRhoEqualityFactor = 1e3;

  void add_ridge_if_singular()
  {
    const auto d = problem_.dim();
    if (d == 0) { return; }
    // Jacobi-scaled test, so widely different diagonal weights do not read as singular
    const Vector diag_p = problem_.P.diagonal();
    bool definite = diag_p.minCoeff() > 0.0;
    if (definite) {
      const Vector s = diag_p.cwiseSqrt().cwiseInverse();
      Eigen::LLT<Matrix> llt(s.asDiagonal() * problem_.P * s.asDiagonal());
      definite = llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 1e-7;
    }
    if (!definite) {
      const double trace = problem_.P.trace();
      ridge_ = trace > 0.0 ? settings_.ridge_relative * trace / static_cast<double>(d) : 0.0;
      problem_.P.diagonal().array() += ridge_;
    }
  }

  void select_independent_equalities()
  {
    eq_rows_.clear();
    if (problem_.num_eq() == 0) { return; }
    // Greedy selection of a maximal independent row subset via column-pivoted QR of A_eq'.
    Eigen::ColPivHouseholderQR<Matrix> qr(problem_.A_eq.transpose());
    qr.setThreshold(1e-12);
    const auto rank = qr.rank();
    for (Eigen::Index i = 0; i < rank; ++i) { eq_rows_.push_back(qr.colsPermutation().indices()(i)); }
    std::sort(eq_rows_.begin(), eq_rows_.end());
    eq_cod_.compute(problem_.A_eq);
  }

  [[nodiscard]] bool equalities_consistent() const
  {
    if (problem_.num_eq() == 0 || static_cast<int>(eq_rows_.size()) == problem_.num_eq()) { return true; }
    const Vector z = eq_cod_.solve(problem_.b_eq);
    const double residual = (problem_.A_eq * z - problem_.b_eq).cwiseAbs().maxCoeff();
    return residual <= settings_.eps_abs * (1.0 + problem_.b_eq.cwiseAbs().maxCoeff());
  }

  void compute_scaling()
  {
    const auto d = problem_.dim();
    var_scale_ = Vector::Ones(d);
    eq_scale_ = Vector::Ones(problem_.num_eq());
    box_scale_ = Vector::Ones(problem_.num_box());
    cost_scale_ = 1.0;
    if (!settings_.scaling || d == 0) { return; }

    auto clip = [](double v) { return std::clamp(v, 1e-4, 1e4); };
    auto safe_inv_sqrt = [&](double v) { return v < 1e-4 ? 1.0 : clip(1.0 / std::sqrt(v)); };

    Matrix P = problem_.P;
    Matrix Ae = problem_.A_eq;
    Matrix Ab = problem_.A_box;
    for (int it = 0; it < settings_.scaling_iter; ++it) {
      Vector dcol(d);
      for (Eigen::Index j = 0; j < d; ++j) {
        double norm = P.col(j).cwiseAbs().maxCoeff();
        if (Ae.rows()) { norm = std::max(norm, Ae.col(j).cwiseAbs().maxCoeff()); }
        if (Ab.rows()) { norm = std::max(norm, Ab.col(j).cwiseAbs().maxCoeff()); }
        dcol(j) = safe_inv_sqrt(norm);
      }
      Vector erow(Ae.rows());
      for (Eigen::Index i = 0; i < Ae.rows(); ++i) { erow(i) = safe_inv_sqrt(Ae.row(i).cwiseAbs().maxCoeff()); }
      Vector brow(Ab.rows());
      for (Eigen::Index i = 0; i < Ab.rows(); ++i) { brow(i) = safe_inv_sqrt(Ab.row(i).cwiseAbs().maxCoeff()); }

      P = dcol.asDiagonal() * P * dcol.asDiagonal();
      Ae = erow.asDiagonal() * Ae * dcol.asDiagonal();
      Ab = brow.asDiagonal() * Ab * dcol.asDiagonal();
      var_scale_ = var_scale_.cwiseProduct(dcol);
      eq_scale_ = eq_scale_.cwiseProduct(erow);
      box_scale_ = box_scale_.cwiseProduct(brow);
    }
    Vector col_norms(d);
    for (Eigen::Index j = 0; j < d; ++j) { col_norms(j) = P.col(j).cwiseAbs().maxCoeff(); }
    const double q_norm = (var_scale_.asDiagonal() * problem_.q).cwiseAbs().maxCoeff();
    const double cost_norm = std::max(col_norms.mean(), q_norm);
    cost_scale_ = cost_norm < 1e-4 ? 1.0 : clip(1.0 / cost_norm);
  }

  void build_scaled_problem()
  {
    const auto D = var_scale_.asDiagonal();
    P_s_ = cost_scale_ * (D * problem_.P * D);
    P_s_ = 0.5 * (P_s_ + P_s_.transpose());
    q_s_ = cost_scale_ * (D * problem_.q);
    A_eq_s_ = eq_scale_.asDiagonal() * problem_.A_eq * D;
    A_box_s_ = box_scale_.asDiagonal() * problem_.A_box * D;
    b_s_ = eq_scale_.asDiagonal() * problem_.b_eq;
    lb_s_ = box_scale_.asDiagonal() * problem_.lb;
    ub_s_ = box_scale_.asDiagonal() * problem_.ub;
  }

  void init_rho()
  {
    rho_vec_.resize(problem_.num_box());
    for (Eigen::Index i = 0; i < rho_vec_.size(); ++i) {
      const bool free_row = !std::isfinite(problem_.lb(i)) && !std::isfinite(problem_.ub(i));
      const bool eq_row = problem_.lb(i) == problem_.ub(i);
      rho_vec_(i) = free_row ? kRhoMin : (eq_row ? kRhoEqualityFactor * rho_ : rho_);
    }
  }

  void factor()
  {
    const auto d = problem_.dim();
    const auto e = static_cast<Eigen::Index>(eq_rows_.size());
    Matrix kkt = Matrix::Zero(d + e, d + e);
    kkt.topLeftCorner(d, d) = P_s_ + A_box_s_.transpose() * rho_vec_.asDiagonal() * A_box_s_;
    kkt.topLeftCorner(d, d).diagonal().array() += settings_.sigma;
    if (e > 0) {
      const Matrix ae = A_eq_s_(eq_rows_, Eigen::all);
      kkt.topRightCorner(d, e) = ae.transpose();
      kkt.bottomLeftCorner(e, d) = ae;
    }
    kkt_lu_.compute(kkt);
  }

  void adapt_rho(const Vector & nu)
  {
    if (problem_.num_box() == 0) { return; }
    const Vector ax = A_box_s_ * x_;
    const double prim = (ax - zc_).cwiseAbs().maxCoeff();
    const Vector px = P_s_ * x_;
    Vector aty = A_box_s_.transpose() * y_;
    if (!eq_rows_.empty()) { aty += A_eq_s_(eq_rows_, Eigen::all).transpose() * nu; }
    const double dual = (px + q_s_ + aty).cwiseAbs().maxCoeff();
    const double prim_norm = std::max({ax.cwiseAbs().maxCoeff(), zc_.cwiseAbs().maxCoeff(), 1e-12});
    const double dual_norm =
        std::max({px.cwiseAbs().maxCoeff(), aty.cwiseAbs().maxCoeff(), q_s_.cwiseAbs().maxCoeff(), 1e-12});
    if (dual <= 0.0 || prim <= 0.0) { return; }
    const double candidate = std::clamp(rho_ * std::sqrt((prim / prim_norm) / (dual / dual_norm)), kRhoMin, kRhoMax);
    if (candidate > 5.0 * rho_ || candidate < 0.2 * rho_) {
      rho_ = candidate;
      init_rho();
      factor();
    }
  }

  /**
   * Farkas test on the dual drift (dnu, dy) between two checks: the drift must
   * be a direction in which A_eq' dnu + A_box' dy vanishes while the support
   * value b' dnu + ub' dy+ + lb' dy- is negative. A feasible problem admits
   * no such direction.
   */
  [[nodiscard]] bool infeasibility_certificate(const Vector & dy, const Vector & dnu) const
  {
    const double norm = std::max(dy.size() ? dy.cwiseAbs().maxCoeff() : 0.0, dnu.size() ? dnu.cwiseAbs().maxCoeff() : 0.0);
    if (norm <= 0.0) { return false; }
    Vector aty = A_box_s_.transpose() * dy;
    double support = 0.0;
    if (!eq_rows_.empty()) {
      aty += A_eq_s_(eq_rows_, Eigen::all).transpose() * dnu;
      support += b_s_(eq_rows_).dot(dnu);
    }
    for (Eigen::Index i = 0; i < dy.size(); ++i) {
      if (dy(i) > 0.0) {
        if (!std::isfinite(ub_s_(i))) { return false; }
        support += ub_s_(i) * dy(i);
      } else if (dy(i) < 0.0) {
        if (!std::isfinite(lb_s_(i))) { return false; }
        support += lb_s_(i) * dy(i);
      }
    }
    constexpr double tol = 1e-6;
    return aty.cwiseAbs().maxCoeff() <= tol * norm && support < -tol * norm;
  }

  /// +1 upper active, -1 lower active, 0 inactive (scaled iterates).
  [[nodiscard]] std::vector<signed char> active_set() const
  {
    std::vector<signed char> active(static_cast<std::size_t>(problem_.num_box()), 0);
    for (Eigen::Index i = 0; i < zc_.size(); ++i) {
      if (lb_s_(i) == ub_s_(i)) {
        active[static_cast<std::size_t>(i)] = 1;
      } else if (ub_s_(i) - zc_(i) < y_(i)) {
        active[static_cast<std::size_t>(i)] = 1;
      } else if (zc_(i) - lb_s_(i) < -y_(i)) {
        active[static_cast<std::size_t>(i)] = -1;
      }
    }
    return active;
  }

  std::optional<QpSolution> try_polish(const std::vector<signed char> & active)
  {
    const auto d = problem_.dim();
    const auto e = static_cast<Eigen::Index>(eq_rows_.size());
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < active.size(); ++i) {
      if (active[i] != 0) { rows.push_back(static_cast<Eigen::Index>(i)); }
    }
    const auto na = static_cast<Eigen::Index>(rows.size());
    const auto size = d + e + na;

    if (!polish_lu_ || active != polish_active_) {
      polish_kkt_ = Matrix::Zero(size, size);
      polish_kkt_.topLeftCorner(d, d) = P_s_;
      if (e > 0) {
        const Matrix ae = A_eq_s_(eq_rows_, Eigen::all);
        polish_kkt_.block(0, d, d, e) = ae.transpose();
        polish_kkt_.block(d, 0, e, d) = ae;
      }
      if (na > 0) {
        const Matrix aa = A_box_s_(rows, Eigen::all);
        polish_kkt_.block(0, d + e, d, na) = aa.transpose();
        polish_kkt_.block(d + e, 0, na, d) = aa;
      }
      Matrix regularized = polish_kkt_;
      constexpr double delta = 1e-9;
      regularized.topLeftCorner(d, d).diagonal().array() += delta;
      regularized.bottomRightCorner(e + na, e + na).diagonal().array() -= delta;
      polish_lu_.emplace(regularized);
      polish_active_ = active;
    }

    Vector rhs(size);
    rhs.head(d) = -q_s_;
    rhs.segment(d, e) = b_s_(eq_rows_);
    for (Eigen::Index k = 0; k < na; ++k) {
      const auto i = rows[static_cast<std::size_t>(k)];
      rhs(d + e + k) = active[static_cast<std::size_t>(i)] > 0 ? ub_s_(i) : lb_s_(i);
    }
    Vector sol = polish_lu_->solve(rhs);
    for (int refine = 0; refine < 8; ++refine) {
      const Vector residual = rhs - polish_kkt_ * sol;
      if (residual.cwiseAbs().maxCoeff() <= 1e-15 * (1.0 + rhs.cwiseAbs().maxCoeff())) { break; }
      sol += polish_lu_->solve(residual);
    }
    if (!sol.allFinite()) { return std::nullopt; }

    Vector y_box = Vector::Zero(problem_.num_box());
    for (Eigen::Index k = 0; k < na; ++k) { y_box(rows[static_cast<std::size_t>(k)]) = sol(d + e + k); }

    QpSolution candidate = make_solution(sol.head(d), sol.segment(d, e), y_box);
    if (!is_certified(candidate)) { return std::nullopt; }
    candidate.status = QpStatus::Solved;
    candidate.polished = true;
    return candidate;
  }

  /// Unscaled solution from scaled primal/dual values (duals of the independent equality rows).
  [[nodiscard]] QpSolution make_solution(const Vector & x_scaled, const Vector & nu_scaled, const Vector & y_scaled) const
  {
    QpSolution sol;
    sol.ridge = ridge_;
    sol.z = var_scale_.asDiagonal() * x_scaled;
    sol.dual_box = box_scale_.cwiseProduct(y_scaled) / cost_scale_;
    sol.dual_eq = Vector::Zero(problem_.num_eq());
    for (std::size_t k = 0; k < eq_rows_.size(); ++k) {
      const auto row = eq_rows_[k];
      sol.dual_eq(row) = eq_scale_(row) * nu_scaled(static_cast<Eigen::Index>(k)) / cost_scale_;
    }
    fill_diagnostics(sol);
    return sol;
  }

  [[nodiscard]] QpSolution unscaled_iterate(const Vector & nu) const
  {
    QpSolution sol = make_solution(x_, nu, y_);
    // ADMM primal residual uses the consensus variable.
    const Vector z_unscaled = box_scale_.cwiseInverse().cwiseProduct(zc_);
    const Vector ax = problem_.A_box * sol.z;
    const double box_gap = ax.size() ? (ax - z_unscaled).cwiseAbs().maxCoeff() : 0.0;
    sol.primal_residual = std::max(sol.kkt.primal_eq, box_gap);
    return sol;
  }

  void fill_diagnostics(QpSolution & sol) const
  {
    if (sol.dual_eq.size() != problem_.num_eq()) { sol.dual_eq = Vector::Zero(problem_.num_eq()); }
    if (sol.dual_box.size() != problem_.num_box()) { sol.dual_box = Vector::Zero(problem_.num_box()); }
    sol.kkt = kkt_residuals(problem_, sol.z, sol.dual_eq, sol.dual_box);
    sol.objective = qp_objective(problem_, sol.z);
    sol.primal_residual = std::max(sol.kkt.primal_eq, sol.kkt.primal_box);
    sol.dual_residual = sol.kkt.stationarity;
    const Vector pz = problem_.P * sol.z;
    double scale = std::max(pz.size() ? pz.cwiseAbs().maxCoeff() : 0.0, problem_.q.size() ? problem_.q.cwiseAbs().maxCoeff() : 0.0);
    if (problem_.num_eq()) { scale = std::max(scale, (problem_.A_eq.transpose() * sol.dual_eq).cwiseAbs().maxCoeff()); }
    if (problem_.num_box()) { scale = std::max(scale, (problem_.A_box.transpose() * sol.dual_box).cwiseAbs().maxCoeff()); }
    sol.stationarity_scale = scale;
  }

  [[nodiscard]] bool is_certified(const QpSolution & sol) const
  {
    return sol.kkt.stationarity <= settings_.eps_abs + settings_.eps_rel * sol.stationarity_scale
           && sol.kkt.primal_eq <= settings_.eps_abs && sol.kkt.primal_box <= settings_.eps_abs
           && sol.kkt.comp_slack <= settings_.eps_abs && sol.primal_residual <= settings_.eps_abs;
  }

  /// Keep the accepted point as the next warm start.
  void accept(const QpSolution & sol)
  {
    x_ = var_scale_.cwiseInverse().cwiseProduct(sol.z);
    zc_ = (A_box_s_ * x_).cwiseMax(lb_s_).cwiseMin(ub_s_);
    y_ = cost_scale_ * box_scale_.cwiseInverse().cwiseProduct(sol.dual_box);
    warm_ = true;
  }
};

/// One-shot solve.
inline QpSolution solve(const QpProblem & problem, const QpSettings & settings = {})
{
  QpSolver solver(problem, settings);
  return solver.solve();
}

}  // namespace ddmpc
