#pragma once

/**
 * @file
 * @brief Experiment configuration and the commands behind the ddmpc tool.
 */

#include "ddmpc/analysis.hpp"
#include "ddmpc/io.hpp"

#include <cstdlib>
#include <iostream>
#include <set>
#include <string>
#include <vector>

namespace ddmpc {

class ConfigError : public Error
{
public:
  using Error::Error;
};

struct DataSpec
{
  int N = 200;
  Vector input_lower;
  Vector input_upper;
  double eps_bar = 1e-3;
  std::uint64_t seed = 42;
};

struct RunSpec
{
  int T_sim = 500;
  std::vector<Variant> variants{Variant::Robust};
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "runs";
  /// plant state before the warm-up
  Vector x0;
};

struct ExperimentConfig
{
  std::optional<LtiSystem> system;
  DataSpec data;
  /// eps_bar, variant and sim_length are filled per run
  MpcConfig mpc;
  RunSpec run;
  /// canonical JSON the config was read from
  io::json source;

  [[nodiscard]] MpcConfig mpc_for(Variant v) const
  {
    MpcConfig c = mpc;
    c.variant = v;
    c.eps_bar = v == Variant::Nominal ? 0.0 : data.eps_bar;
    c.sim_length = run.T_sim;
    return c;
  }

  [[nodiscard]] std::string digest() const { return io::digest(source.dump()); }
};

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json & obj, std::initializer_list<const char *> allowed, const std::string & where)
{
  if (!obj.is_object()) { throw ConfigError(where + ": expected an object"); }
  for (const auto & item : obj.items()) {
    bool known = false;
    for (const char * key : allowed) { known = known || item.key() == key; }
    if (!known) { throw ConfigError(where + ": unknown key '" + item.key() + "'"); }
  }
}

inline const json & require(const json & obj, const char * key, const std::string & where)
{
  if (!obj.contains(key)) { throw ConfigError(where + ": missing key '" + key + "'"); }
  return obj.at(key);
}

inline Vector json_vector(const json & j, const std::string & where)
{
  if (j.is_number()) { return Vector::Constant(1, j.get<double>()); }
  if (!j.is_array() || j.empty()) { throw ConfigError(where + ": expected a number or a non-empty array"); }
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) { throw ConfigError(where + ": entries must be numbers"); }
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

/// Scalars are 1 x 1 matrices; a flat array is a diagonal.
inline Matrix json_matrix(const json & j, const std::string & where)
{
  if (j.is_number()) { return Matrix::Constant(1, 1, j.get<double>()); }
  if (!j.is_array() || j.empty()) { throw ConfigError(where + ": expected a number or a non-empty array"); }
  if (!j[0].is_array()) { return json_vector(j, where).asDiagonal(); }
  const auto rows = j.size();
  const auto cols = j[0].size();
  Matrix a(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols) { throw ConfigError(where + ": ragged matrix"); }
    for (std::size_t k = 0; k < cols; ++k) {
      if (!j[i][k].is_number()) { throw ConfigError(where + ": entries must be numbers"); }
      a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
    }
  }
  return a;
}

template <typename T>
T json_get(const json & j, const std::string & where)
{
  try {
    return j.get<T>();
  } catch (const json::exception &) {
    throw ConfigError(where + ": wrong type");
  }
}

}  // namespace detail

/**
 * @brief Parse and validate an experiment document.
 *
 * Top-level keys: system, data, mpc, run. The output setpoint may be omitted,
 * in which case it is the steady-state output of the plant under u_s.
 */
inline ExperimentConfig parse_experiment_config(const io::json & j)
{
  using detail::json_get;
  using detail::json_matrix;
  using detail::json_vector;
  using detail::require;
  ExperimentConfig cfg;
  cfg.source = j;
  detail::reject_unknown(j, {"system", "data", "mpc", "run"}, "config");

  const auto & sys = require(j, "system", "config");
  detail::reject_unknown(sys, {"builtin", "A", "B", "C", "D"}, "system");
  try {
    if (sys.contains("builtin")) {
      if (sys.size() != 1) { throw ConfigError("system: 'builtin' excludes inline matrices"); }
      const auto name = json_get<std::string>(sys.at("builtin"), "system.builtin");
      if (name != "cstr") { throw ConfigError("system: unknown builtin '" + name + "'"); }
      cfg.system = cstr_example();
    } else {
      const Matrix a = json_matrix(require(sys, "A", "system"), "system.A");
      const Matrix b = json_matrix(require(sys, "B", "system"), "system.B");
      const Matrix c = json_matrix(require(sys, "C", "system"), "system.C");
      const Matrix d = sys.contains("D") ? json_matrix(sys.at("D"), "system.D") : Matrix::Zero(c.rows(), b.cols());
      cfg.system.emplace(a, b, c, d);
    }
  } catch (const DimensionError & e) {
    throw ConfigError(std::string("system: ") + e.what());
  }
  const int m = cfg.system->m();
  const int p = cfg.system->p();
  const int n = cfg.system->n();

  const auto & data = require(j, "data", "config");
  detail::reject_unknown(data, {"N", "input_box", "eps_bar", "seed"}, "data");
  cfg.data.N = json_get<int>(require(data, "N", "data"), "data.N");
  const auto & box = require(data, "input_box", "data");
  detail::reject_unknown(box, {"lower", "upper"}, "data.input_box");
  cfg.data.input_lower = json_vector(require(box, "lower", "data.input_box"), "data.input_box.lower");
  cfg.data.input_upper = json_vector(require(box, "upper", "data.input_box"), "data.input_box.upper");
  cfg.data.eps_bar = json_get<double>(require(data, "eps_bar", "data"), "data.eps_bar");
  cfg.data.seed = json_get<std::uint64_t>(require(data, "seed", "data"), "data.seed");
  if (cfg.data.N < 1) { throw ConfigError("data.N must be >= 1"); }
  if (cfg.data.eps_bar < 0.0) { throw ConfigError("data.eps_bar must be >= 0"); }
  if (cfg.data.input_lower.size() != m || cfg.data.input_upper.size() != m) { throw ConfigError("data.input_box: need m entries"); }
  if ((cfg.data.input_lower.array() > cfg.data.input_upper.array()).any()) { throw ConfigError("data.input_box: lower > upper"); }

  const auto & mpc = require(j, "mpc", "config");
  detail::reject_unknown(mpc,
                         {"L", "l", "state_dim", "Q", "R", "lambda_alpha_times_eps", "lambda_sigma_over_eps", "eps_bar", "u_min",
                          "u_max", "setpoint"},
                         "mpc");
  MpcConfig & mc = cfg.mpc;
  mc.L = json_get<int>(require(mpc, "L", "mpc"), "mpc.L");
  mc.l = json_get<int>(require(mpc, "l", "mpc"), "mpc.l");
  mc.state_dim = mpc.contains("state_dim") ? json_get<int>(mpc.at("state_dim"), "mpc.state_dim") : n;
  mc.Q = json_matrix(require(mpc, "Q", "mpc"), "mpc.Q");
  mc.R = json_matrix(require(mpc, "R", "mpc"), "mpc.R");
  mc.lambda_alpha_times_eps = json_get<double>(require(mpc, "lambda_alpha_times_eps", "mpc"), "mpc.lambda_alpha_times_eps");
  mc.lambda_sigma_over_eps = json_get<double>(require(mpc, "lambda_sigma_over_eps", "mpc"), "mpc.lambda_sigma_over_eps");
  if (mpc.contains("eps_bar") && json_get<double>(mpc.at("eps_bar"), "mpc.eps_bar") != cfg.data.eps_bar) {
    throw ConfigError("mpc.eps_bar must equal data.eps_bar");
  }
  mc.u_min = json_vector(require(mpc, "u_min", "mpc"), "mpc.u_min");
  mc.u_max = json_vector(require(mpc, "u_max", "mpc"), "mpc.u_max");
  const auto & sp = require(mpc, "setpoint", "mpc");
  detail::reject_unknown(sp, {"u", "y"}, "mpc.setpoint");
  mc.setpoint.u = json_vector(require(sp, "u", "mpc.setpoint"), "mpc.setpoint.u");
  if (mc.setpoint.u.size() != m) { throw ConfigError("mpc.setpoint.u: need m entries"); }
  mc.setpoint.y = sp.contains("y") ? json_vector(sp.at("y"), "mpc.setpoint.y") : equilibrium(*cfg.system, mc.setpoint.u).y;

  const auto & run = require(j, "run", "config");
  detail::reject_unknown(run, {"T_sim", "variants", "seeds", "output_dir", "x0"}, "run");
  cfg.run.T_sim = json_get<int>(require(run, "T_sim", "run"), "run.T_sim");
  cfg.run.variants.clear();
  for (const auto & v : json_get<std::vector<std::string>>(require(run, "variants", "run"), "run.variants")) {
    try {
      cfg.run.variants.push_back(parse_variant(v));
    } catch (const InvalidArgument & e) {
      throw ConfigError(std::string("run.variants: ") + e.what());
    }
  }
  cfg.run.seeds = json_get<std::vector<std::uint64_t>>(require(run, "seeds", "run"), "run.seeds");
  cfg.run.output_dir = run.contains("output_dir") ? json_get<std::string>(run.at("output_dir"), "run.output_dir") : "runs";
  cfg.run.x0 = run.contains("x0") ? json_vector(run.at("x0"), "run.x0") : Vector::Zero(n);
  if (cfg.run.x0.size() != n) { throw ConfigError("run.x0: need n entries"); }
  if (cfg.run.variants.empty() || cfg.run.seeds.empty()) { throw ConfigError("run: variants and seeds must be non-empty"); }

  std::set<std::uint64_t> seen{cfg.data.seed};
  for (auto s : cfg.run.seeds) {
    if (!seen.insert(s).second) { throw ConfigError("seed " + std::to_string(s) + " is used more than once"); }
  }
  std::set<Variant> variants(cfg.run.variants.begin(), cfg.run.variants.end());
  if (variants.size() != cfg.run.variants.size()) { throw ConfigError("run.variants: duplicate entry"); }

  try {
    for (auto v : cfg.run.variants) {
      if (v != Variant::Nominal && cfg.data.eps_bar == 0.0) { throw ConfigError("robust variants need data.eps_bar > 0"); }
      if (v == Variant::Nominal || cfg.data.eps_bar > 0.0) { cfg.mpc_for(v).validate(); }
    }
  } catch (const ConfigError &) {
    throw;
  } catch (const Error & e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

/// DDMPC_SEED_OVERRIDE replaces every seed (the run list collapses to that single seed).
inline void apply_seed_override(ExperimentConfig & cfg, const char * value)
{
  if (value == nullptr || *value == '\0') { return; }
  char * end = nullptr;
  const unsigned long long seed = std::strtoull(value, &end, 10);
  if (end == value || *end != '\0') { throw ConfigError(std::string("DDMPC_SEED_OVERRIDE: not an integer: ") + value); }
  cfg.data.seed = seed;
  cfg.run.seeds = {seed};
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path & path)
{
  ExperimentConfig cfg;
  try {
    cfg = parse_experiment_config(io::read_json(path));
  } catch (const IoError & e) {
    throw ConfigError(e.what());
  }
  apply_seed_override(cfg, std::getenv("DDMPC_SEED_OVERRIDE"));
  return cfg;
}

// ---------------------------------------------------------------------------
// Commands. Each returns a process exit code and reports on the given streams.

inline PeReport cmd_generate_data(const ExperimentConfig & cfg, const std::filesystem::path & out_dir, std::ostream & out)
{
  const DataSet data =
      make_dataset(*cfg.system, cfg.data.N, cfg.data.input_lower, cfg.data.input_upper, cfg.data.eps_bar, cfg.data.seed);
  const int order = cfg.mpc.pe_order();
  PeReport pe;
  try {
    pe = check_pe(data.u, order);
  } catch (const InsufficientDataError & e) {
    throw PersistencyError(std::string(e.what()) + "; increase data.N");
  }
  if (!pe.passes) {
    throw PersistencyError("generated input is not persistently exciting of order " + std::to_string(order)
                           + "; regenerate with another data.seed or a larger data.N");
  }
  io::save_dataset(out_dir, data);
  out << "wrote " << (out_dir / "data.csv").string() << " (N=" << data.length() << ", eps_bar=" << data.eps_bar
      << ", seed=" << data.seed << ")\n"
      << "PE order " << order << ": pass, min singular value " << io::format_double(pe.min_singular_value) << '\n';
  return pe;
}

inline std::string run_name(Variant v, std::uint64_t seed)
{
  return std::string(to_string(v)) + "_seed" + std::to_string(seed);
}

struct RunSummary
{
  Variant variant = Variant::Robust;
  std::uint64_t seed = 0;
  bool all_solved = false;
  int records = 0;
  double cost = std::numeric_limits<double>::quiet_NaN();
  double final_tracking_error = std::numeric_limits<double>::quiet_NaN();
};

inline io::json summary_json(const ExperimentConfig & cfg, const ClosedLoopLog & log, const MpcConfig & mc)
{
  io::json j;
  j["variant"] = std::string(to_string(log.variant));
  j["seed"] = log.seed;
  j["config_digest"] = log.config_digest;
  j["T_sim"] = cfg.run.T_sim;
  j["records"] = log.length();
  j["all_solved"] = log.all_solved();
  const bool complete = log.all_solved() && log.length() == cfg.run.T_sim + 1;
  j["cost"] = complete ? io::json(closed_loop_cost(log, mc.setpoint, mc.Q, mc.R, cfg.run.T_sim)) : io::json(nullptr);
  j["final_tracking_error"] = complete ? io::json(tracking_error(log, mc.setpoint, cfg.run.T_sim)) : io::json(nullptr);
  long total = 0;
  int max_iter = 0;
  double kkt = 0.0;
  for (const auto & r : log.records) {
    total += r.iterations;
    max_iter = std::max(max_iter, r.iterations);
    kkt = std::max({kkt, r.kkt.primal_eq, r.kkt.primal_box, r.kkt.comp_slack, r.kkt.stationarity / (1.0 + r.stationarity_scale)});
  }
  j["solver"] = {{"total_iterations", total}, {"max_iterations", max_iter}, {"max_kkt_residual", kkt}};
  j["setpoint"] = {{"u", io::to_json(mc.setpoint.u)}, {"y", io::to_json(mc.setpoint.y)}};
  j["Q"] = io::to_json(mc.Q);
  j["R"] = io::to_json(mc.R);
  return j;
}

/// Runs every (variant, seed) pair; exit code 0 iff every QP was solved.
inline int cmd_run(const ExperimentConfig & cfg, const std::filesystem::path & data_dir, const std::filesystem::path & out_dir,
                   std::ostream & out, std::ostream & err)
{
  const DataSet data = io::load_dataset(data_dir);
  if (data.m() != cfg.system->m() || data.p() != cfg.system->p()) { throw ConfigError("data dimensions do not match the system"); }
  int code = 0;
  for (auto v : cfg.run.variants) {
    const MpcConfig mc = cfg.mpc_for(v);
    if (v != Variant::Nominal && data.eps_bar != cfg.data.eps_bar) {
      throw ConfigError("data eps_bar " + io::format_double(data.eps_bar) + " differs from the config");
    }
    if (v == Variant::Nominal && !data.y_clean && data.eps_bar != 0.0) {
      throw ConfigError("Nominal needs noise-free outputs (y_clean) in the data");
    }
    for (auto seed : cfg.run.seeds) {
      const InitialWindow init = warm_up(*cfg.system, cfg.run.x0, mc.setpoint.u, mc.l);
      ClosedLoopLog log = closed_loop(*cfg.system, data, mc, init, seed);
      log.config_digest = cfg.digest();
      const auto dir = out_dir / run_name(v, seed);
      io::write_log_csv(dir / "log.csv", log);
      const auto summary = summary_json(cfg, log, mc);
      io::write_json(dir / "summary.json", summary);
      if (log.all_solved()) {
        out << run_name(v, seed) << ": cost " << io::format_double(summary["cost"].get<double>()) << ", final tracking error "
            << io::format_double(summary["final_tracking_error"].get<double>()) << '\n';
      } else {
        const auto & last = log.records.back();
        err << run_name(v, seed) << ": solver returned " << to_string(last.status) << " at t=" << last.t
            << "; partial log kept in " << dir.string() << '\n';
        code = 1;
      }
    }
  }
  return code;
}

struct RunDirectory
{
  ClosedLoopLog log;
  io::json summary;
  Setpoint setpoint;
  Matrix Q, R;
  int T_sim = 0;
};

inline RunDirectory load_run(const std::filesystem::path & dir)
{
  RunDirectory run;
  run.summary = io::read_json(dir / "summary.json");
  run.log = io::read_log_csv(dir / "log.csv");
  try {
    run.setpoint.u = detail::json_vector(run.summary.at("setpoint").at("u"), "summary.setpoint.u");
    run.setpoint.y = detail::json_vector(run.summary.at("setpoint").at("y"), "summary.setpoint.y");
    run.Q = detail::json_matrix(run.summary.at("Q"), "summary.Q");
    run.R = detail::json_matrix(run.summary.at("R"), "summary.R");
    run.T_sim = run.summary.at("T_sim").get<int>();
  } catch (const io::json::exception & e) {
    throw IoError((dir / "summary.json").string() + ": " + e.what());
  }
  return run;
}

inline io::json to_json(const ComparisonReport & r)
{
  return io::json{{"cost_a", r.cost_a},
                  {"cost_b", r.cost_b},
                  {"relative_gap", r.relative_gap},
                  {"input_total_variation_a", r.input_total_variation_a},
                  {"input_total_variation_b", r.input_total_variation_b},
                  {"final_tracking_error_a", r.final_tracking_error_a},
                  {"final_tracking_error_b", r.final_tracking_error_b},
                  {"T", r.horizon}};
}

/// Writes the report to `out_file` and the merged trajectories next to it with a .csv extension.
inline ComparisonReport cmd_compare(const std::filesystem::path & dir_a, const std::filesystem::path & dir_b,
                                    const std::filesystem::path & out_file, std::ostream & out)
{
  const RunDirectory a = load_run(dir_a);
  const RunDirectory b = load_run(dir_b);
  if (a.T_sim != b.T_sim || a.log.length() != b.log.length()) { throw InvalidArgument("compare: runs have different lengths"); }
  if (a.setpoint.u != b.setpoint.u || a.setpoint.y != b.setpoint.y || a.Q != b.Q || a.R != b.R) {
    throw InvalidArgument("compare: runs use different setpoints or weights");
  }
  if (!a.log.all_solved() || !b.log.all_solved()) { throw InvalidArgument("compare: both runs must be complete"); }
  const ComparisonReport rep = compare_runs(a.log, b.log, a.setpoint, a.Q, a.R, a.T_sim);
  io::write_json(out_file, to_json(rep));

  std::filesystem::path merged = out_file;
  merged.replace_extension(".csv");
  if (merged == out_file) { merged += ".csv"; }
  auto csv = io::open_out(merged);
  const auto m = a.setpoint.u.size();
  const auto p = a.setpoint.y.size();
  csv << 't';
  for (const char * name : {"u_a", "u_b"}) {
    for (const auto & c : io::channel_names(name, static_cast<int>(m), m > 1 || p > 1)) { csv << ',' << c; }
  }
  for (const char * name : {"y_a", "y_b"}) {
    for (const auto & c : io::channel_names(name, static_cast<int>(p), m > 1 || p > 1)) { csv << ',' << c; }
  }
  csv << '\n';
  for (int t = 0; t < a.log.length(); ++t) {
    const auto & ra = a.log.records[static_cast<std::size_t>(t)];
    const auto & rb = b.log.records[static_cast<std::size_t>(t)];
    csv << ra.t;
    for (const Vector * v : {&ra.u, &rb.u, &ra.y, &rb.y}) {
      for (Eigen::Index i = 0; i < v->size(); ++i) { csv << ',' << io::format_double((*v)(i)); }
    }
    csv << '\n';
  }
  out << "cost a " << io::format_double(rep.cost_a) << ", cost b " << io::format_double(rep.cost_b) << ", gap "
      << io::format_double(100.0 * rep.relative_gap) << "%\n";
  return rep;
}

/// Prints the PE verdict; exit code 0 on pass, 1 on fail.
inline int cmd_check_pe(const std::filesystem::path & data_path, int order, std::ostream & out)
{
  const DataSet data = io::load_dataset(data_path);
  try {
    const PeReport pe = check_pe(data.u, order);
    out << "PE order " << order << ": " << (pe.passes ? "pass" : "fail") << " (rank " << pe.rank << " of " << pe.rows
        << ", min singular value " << io::format_double(pe.min_singular_value) << ")\n";
    return pe.passes ? 0 : 1;
  } catch (const InsufficientDataError & e) {
    out << "PE order " << order << ": fail (" << e.what() << ")\n";
    return 1;
  }
}

}  // namespace ddmpc
