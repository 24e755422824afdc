// Acceptance suite: one line per criterion, nonzero exit if any fails.

#include "ddmpc/analysis.hpp"
#include "qp_oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

using namespace ddmpc;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

double median(std::vector<double> v)
{
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct KktTally
{
  long qps = 0;
  long failed = 0;
  double worst = 0.0;

  void add(const StepRecord & r)
  {
    ++qps;
    const double res = std::max({r.kkt.primal_eq, r.kkt.primal_box, r.kkt.comp_slack, r.kkt.stationarity / (1.0 + r.stationarity_scale)});
    worst = std::max(worst, res);
    if (r.status != QpStatus::Solved || !(res <= 1e-8)) { ++failed; }
  }
  void add(const ClosedLoopLog & log)
  {
    for (const auto & r : log.records) { add(r); }
  }
};

KktTally g_kkt;

const LtiSystem & plant()
{
  static const LtiSystem sys = cstr_example();
  return sys;
}

MpcConfig paper_config(Variant variant)
{
  MpcConfig c;
  c.L = 20;
  c.l = 2;
  c.state_dim = 2;
  c.Q = Matrix::Ones(1, 1);
  c.R = Matrix::Constant(1, 1, 0.01);
  c.lambda_alpha_times_eps = 1e-2;
  c.lambda_sigma_over_eps = 1e5;
  c.u_min = Vector::Zero(1);
  c.u_max = Vector::Constant(1, 0.9);
  c.setpoint.u = Vector::Constant(1, 0.8);
  c.setpoint.y = equilibrium(plant(), c.setpoint.u).y;
  c.variant = variant;
  c.eps_bar = variant == Variant::Nominal ? 0.0 : 1e-3;
  c.sim_length = 500;
  return c;
}

DataSet paper_data(double eps, std::uint64_t seed)
{
  return make_dataset(plant(), 200, Vector::Zero(1), Vector::Constant(1, 0.9), eps, seed);
}

ClosedLoopLog paper_run(const MpcConfig & c, double data_eps, std::uint64_t seed)
{
  const auto log = closed_loop(plant(), paper_data(data_eps, seed), c, warm_up(plant(), Vector::Zero(2), c.setpoint.u, c.l), seed);
  g_kkt.add(log);
  return log;
}

/// max |y_t - y_s| over t in [from, end]
double max_error_from(const ClosedLoopLog & log, const Setpoint & sp, int from)
{
  double e = 0.0;
  for (int t = from; t < log.length(); ++t) { e = std::max(e, tracking_error(log, sp, t)); }
  return e;
}

double mean_error_from(const ClosedLoopLog & log, const Setpoint & sp, int from)
{
  double e = 0.0;
  for (int t = from; t < log.length(); ++t) { e += tracking_error(log, sp, t); }
  return e / static_cast<double>(log.length() - from);
}

struct Outcome
{
  bool pass = false;
  std::string detail;
};

std::string fmt(const char * f, double v)
{
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome fundamental_lemma()
{
  const auto start = Clock::now();
  const auto data = paper_data(0.0, 0);
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> state(-0.1, 0.1);
  std::uniform_real_distribution<double> input(0.0, 0.9);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Vector x0 = (Vector(2) << state(rng), state(rng)).finished();
    Matrix u = Matrix::NullaryExpr(1, 22, [&]() { return input(rng); });
    const auto truth = simulate(plant(), x0, u);
    const Matrix y_dd = dd_simulate(data, 2, u.leftCols(2), truth.y.leftCols(2), u.rightCols(20));
    worst = std::max(worst, (y_dd - truth.y.rightCols(20)).cwiseAbs().maxCoeff());
  }
  const double secs = seconds_since(start);
  return {worst <= 1e-6 && secs <= 5.0, "max output error " + fmt("%.2e", worst) + " over 100 windows, " + fmt("%.2f", secs) + " s"};
}

Outcome qp_random_instances()
{
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  int solved = 0;
  for (int instance = 0; instance < 50; ++instance) {
    const auto qp = testing::random_qp(rng);
    const auto sol = solve(qp);
    if (sol.status != QpStatus::Solved) { continue; }
    ++solved;
    const auto oracle = testing::projected_gradient_oracle(qp);
    worst = std::max(worst, std::abs(sol.objective - oracle.dual_value));
  }
  const double secs = seconds_since(start);
  return {solved == 50 && worst <= 1e-6 && secs <= 10.0,
          std::to_string(solved) + "/50 random QPs solved, max objective gap to oracle " + fmt("%.2e", worst) + ", " + fmt("%.2f", secs) + " s"};
}

Outcome nominal_loop()
{
  const auto c = paper_config(Variant::Nominal);
  const auto start = Clock::now();
  const auto log = paper_run(c, 0.0, 0);
  const double secs = seconds_since(start);
  if (!log.all_solved()) { return {false, "closed loop aborted"}; }
  const double err = max_error_from(log, c.setpoint, 400);
  double rise = -std::numeric_limits<double>::infinity();
  for (int t = 0; t + 1 < log.length(); ++t) {
    rise = std::max(rise, log.records[static_cast<std::size_t>(t + 1)].J_star - log.records[static_cast<std::size_t>(t)].J_star);
  }
  const bool tracking = err <= 1e-6;
  const bool monotone = rise <= 1e-9;
  return {tracking && monotone && secs <= 60.0,
          "max |y-y_s| for t>=400 " + fmt("%.2e", err) + (tracking ? " (ok)" : " (> 1e-6)") + ", max J* increase "
              + fmt("%.2e", rise) + (monotone ? " (ok)" : " (> 1e-9)") + ", " + fmt("%.2f", secs) + " s"};
}

Outcome robust_loop()
{
  const auto c = paper_config(Variant::Robust);
  int converged = 0;
  bool inputs_ok = true;
  bool solved = true;
  double slowest = 0.0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto start = Clock::now();
    const auto log = paper_run(c, 1e-3, seed);
    slowest = std::max(slowest, seconds_since(start));
    solved = solved && log.all_solved() && log.length() == 501;
    for (const auto & r : log.records) { inputs_ok = inputs_ok && r.u(0) >= 0.0 && r.u(0) <= 0.9; }
    const double err = max_error_from(log, c.setpoint, log.length() - 100);
    worst = std::max(worst, err);
    if (err <= 5e-3) { ++converged; }
  }
  return {solved && inputs_ok && converged >= 9 && slowest <= 180.0,
          std::to_string(converged) + "/10 seeds within 5e-3 over the final 100 steps (worst " + fmt("%.2e", worst)
              + "), inputs in [0,0.9]: " + (inputs_ok ? "yes" : "no") + ", slowest run " + fmt("%.2f", slowest) + " s"};
}

Outcome noise_scaling()
{
  const auto base = paper_config(Variant::Robust);
  std::vector<double> medians;
  std::string detail = "median final-100 mean error:";
  bool solved = true;
  for (double eps : {1e-3, 1e-4, 1e-5}) {
    const auto c = base.at_noise_level(eps);
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto log = paper_run(c, eps, seed);
      solved = solved && log.all_solved();
      errs.push_back(mean_error_from(log, c.setpoint, log.length() - 100));
    }
    medians.push_back(median(errs));
    detail += " " + fmt("%.2e", eps) + " -> " + fmt("%.3e", medians.back());
  }
  const bool decreasing = medians[1] < medians[0] && medians[2] < medians[1];
  return {solved && decreasing, detail + (decreasing ? "" : " (not strictly decreasing)")};
}

Outcome tec_comparison()
{
  const auto robust = paper_config(Variant::Robust);
  const auto tec = paper_config(Variant::RobustTec);
  int higher_cost = 0;
  int higher_tv = 0;
  bool solved = true;
  std::vector<double> gaps;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto a = paper_run(robust, 1e-3, seed);
    const auto b = paper_run(tec, 1e-3, seed);
    solved = solved && a.all_solved() && b.all_solved();
    if (!solved) { break; }
    const auto rep = compare_runs(a, b, robust.setpoint, robust.Q, robust.R, 500);
    gaps.push_back(rep.relative_gap);
    if (rep.relative_gap >= 0.0) { ++higher_cost; }
    if (rep.input_total_variation_b > rep.input_total_variation_a) { ++higher_tv; }
  }
  if (!solved) { return {false, "closed loop aborted"}; }
  const double med = median(gaps);
  return {higher_cost >= 9 && higher_tv >= 9 && med >= 0.005 && med <= 0.20,
          "TEC cost higher in " + std::to_string(higher_cost) + "/10, median gap " + fmt("%.2f", 100.0 * med) + "%, TEC total variation higher in "
              + std::to_string(higher_tv) + "/10"};
}

Outcome ioss()
{
  const auto c = paper_config(Variant::Robust);
  const auto start = Clock::now();
  const auto ext = extend_system(plant(), 2);
  const auto cert = build_ioss_certificate(ext, c.Q, c.R);
  const auto check = verify_ioss_certificate(ext, c.Q, c.R, cert);
  const double secs = seconds_since(start);
  return {check.passes && check.max_eigenvalue <= 1e-10 && secs <= 1.0,
          "max eigenvalue " + fmt("%.3e", check.max_eigenvalue) + ", eps_o " + fmt("%.3e", cert.eps) + ", " + fmt("%.3f", secs) + " s"};
}

Outcome prediction_error()
{
  const auto c = paper_config(Variant::Robust);
  PredictionStudySetup setup{200, Vector::Zero(1), Vector::Constant(1, 0.9), Vector::Zero(2), 50, {0, 1, 2, 3, 4}};
  const auto noisy = prediction_error_study(plant(), {1e-3, 1e-4, 1e-5}, c, setup);
  const auto exact = prediction_error_study(plant(), {0.0}, c, setup);
  std::string detail = "mean one-step error:";
  for (const auto & row : noisy.rows) { detail += " " + fmt("%.0e", row.eps_bar) + " -> " + fmt("%.3e", row.mean_error); }
  detail += ", 0 -> " + fmt("%.2e", exact.rows[0].mean_error);
  return {noisy.strictly_decreasing && exact.rows[0].mean_error <= 1e-6, detail};
}

}  // namespace

int main()
{
  struct Criterion
  {
    int id;
    std::function<Outcome()> run;
  };
  // criterion 2 also certifies every QP solved by the other criteria, so it reports last
  Outcome random_qps;
  const std::vector<Criterion> criteria{
      {1, fundamental_lemma}, {3, nominal_loop}, {4, robust_loop}, {5, noise_scaling},
      {6, tec_comparison},    {7, ioss},         {8, prediction_error},
  };
  std::vector<std::pair<int, Outcome>> results;
  const auto suite_start = Clock::now();
  for (const auto & c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception & e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    results.emplace_back(c.id, o);
  }
  {
    Outcome o;
    try {
      o = qp_random_instances();
    } catch (const std::exception & e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const bool loop_ok = g_kkt.failed == 0 && g_kkt.qps > 0;
    o.detail = std::to_string(g_kkt.qps - g_kkt.failed) + "/" + std::to_string(g_kkt.qps) + " MPC QPs certified (worst KKT residual "
               + fmt("%.2e", g_kkt.worst) + "); " + o.detail;
    o.pass = o.pass && loop_ok;
    results.emplace_back(2, o);
  }
  std::sort(results.begin(), results.end(), [](const auto & a, const auto & b) { return a.first < b.first; });

  int failures = 0;
  for (const auto & [id, o] : results) {
    std::printf("[PRIMARY] criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    if (!o.pass) { ++failures; }
  }
  std::printf("acceptance: %zu/%zu criteria passed in %.1f s\n", results.size() - static_cast<std::size_t>(failures), results.size(),
              seconds_since(suite_start));
  return failures == 0 ? 0 : 1;
}
