#pragma once

/**
 * @file
 * @brief CSV and JSON persistence for data sets, closed-loop logs and reports.
 *
 * Numbers are written with %.17g so every double round-trips exactly.
 */

#include "ddmpc/mpc.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace ddmpc {

class IoError : public Error
{
public:
  using Error::Error;
};

namespace io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline std::string format_double(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double parse_double(const std::string & s, const std::string & where)
{
  if (s == "nan" || s == "NaN" || s == "-nan") { return std::numeric_limits<double>::quiet_NaN(); }
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception &) {
    throw IoError(where + ": '" + s + "' is not a number");
  }
  if (used != s.size()) { throw IoError(where + ": '" + s + "' is not a number"); }
  return v;
}

inline std::vector<std::string> split(const std::string & line, char sep = ',')
{
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) {
    if (!cell.empty() && cell.back() == '\r') { cell.pop_back(); }
    out.push_back(cell);
  }
  if (!line.empty() && line.back() == sep) { out.emplace_back(); }
  return out;
}

inline std::vector<std::vector<std::string>> read_csv(const fs::path & path, std::vector<std::string> & header)
{
  std::ifstream in(path);
  if (!in) { throw IoError("cannot open " + path.string()); }
  std::string line;
  if (!std::getline(in, line)) { throw IoError(path.string() + ": empty file"); }
  header = split(line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") { continue; }
    auto cells = split(line);
    if (cells.size() != header.size()) {
      throw IoError(path.string() + ": row " + std::to_string(rows.size() + 1) + " has " + std::to_string(cells.size())
                    + " fields, header has " + std::to_string(header.size()));
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

inline std::ofstream open_out(const fs::path & path)
{
  if (path.has_parent_path()) { fs::create_directories(path.parent_path()); }
  std::ofstream out(path, std::ios::binary);
  if (!out) { throw IoError("cannot write " + path.string()); }
  return out;
}

/// Column names: "name" for a single channel, "name_0", "name_1", ... otherwise.
inline std::vector<std::string> channel_names(const std::string & name, int count, bool force_index = false)
{
  std::vector<std::string> names;
  if (count == 1 && !force_index) {
    names.push_back(name);
  } else {
    for (int i = 0; i < count; ++i) { names.push_back(name + "_" + std::to_string(i)); }
  }
  return names;
}

inline int count_prefix(const std::vector<std::string> & header, const std::string & prefix)
{
  int n = 0;
  while (std::find(header.begin(), header.end(), prefix + "_" + std::to_string(n)) != header.end()) { ++n; }
  return n;
}

inline std::size_t column(const std::vector<std::string> & header, const std::string & name, const fs::path & path)
{
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) { throw IoError(path.string() + ": missing column '" + name + "'"); }
  return static_cast<std::size_t>(it - header.begin());
}

// ---------------------------------------------------------------------------
// Data sets: data.csv (k,u_*,y_*[,y_clean_*]) plus data.json {N,m,p,eps_bar,seed}

inline void write_dataset_csv(const fs::path & path, const DataSet & data)
{
  data.validate();
  auto out = open_out(path);
  std::vector<std::string> cols{"k"};
  for (auto & c : channel_names("u", data.m(), true)) { cols.push_back(c); }
  for (auto & c : channel_names("y", data.p(), true)) { cols.push_back(c); }
  if (data.y_clean) {
    for (auto & c : channel_names("y_clean", data.p(), true)) { cols.push_back(c); }
  }
  for (std::size_t i = 0; i < cols.size(); ++i) { out << (i ? "," : "") << cols[i]; }
  out << '\n';
  for (int k = 0; k < data.length(); ++k) {
    out << k;
    for (int i = 0; i < data.m(); ++i) { out << ',' << format_double(data.u(i, k)); }
    for (int i = 0; i < data.p(); ++i) { out << ',' << format_double(data.y_noisy(i, k)); }
    if (data.y_clean) {
      for (int i = 0; i < data.p(); ++i) { out << ',' << format_double((*data.y_clean)(i, k)); }
    }
    out << '\n';
  }
}

/// Reads the CSV; eps_bar and seed are zero unless a sidecar supplies them.
inline DataSet read_dataset_csv(const fs::path & path)
{
  std::vector<std::string> header;
  const auto rows = read_csv(path, header);
  const int m = count_prefix(header, "u");
  const int p = count_prefix(header, "y");
  const int pc = count_prefix(header, "y_clean");
  if (m < 1 || p < 1) { throw IoError(path.string() + ": expected columns u_0.. and y_0.."); }
  if (pc != 0 && pc != p) { throw IoError(path.string() + ": y_clean columns do not match y columns"); }
  if (rows.empty()) { throw IoError(path.string() + ": no samples"); }
  DataSet data;
  const auto n = static_cast<Eigen::Index>(rows.size());
  data.u.resize(m, n);
  data.y_noisy.resize(p, n);
  if (pc) { data.y_clean = Matrix(p, n); }
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto & r = rows[static_cast<std::size_t>(k)];
    const std::string where = path.string() + " row " + std::to_string(k + 1);
    for (int i = 0; i < m; ++i) { data.u(i, k) = parse_double(r[column(header, "u_" + std::to_string(i), path)], where); }
    for (int i = 0; i < p; ++i) { data.y_noisy(i, k) = parse_double(r[column(header, "y_" + std::to_string(i), path)], where); }
    for (int i = 0; i < pc; ++i) {
      (*data.y_clean)(i, k) = parse_double(r[column(header, "y_clean_" + std::to_string(i), path)], where);
    }
  }
  if (!data.u.allFinite() || !data.y_noisy.allFinite()) { throw IoError(path.string() + ": non-finite samples"); }
  return data;
}

inline json dataset_sidecar(const DataSet & data)
{
  return json{{"N", data.length()}, {"m", data.m()}, {"p", data.p()}, {"eps_bar", data.eps_bar}, {"seed", data.seed}};
}

inline void save_dataset(const fs::path & dir, const DataSet & data)
{
  write_dataset_csv(dir / "data.csv", data);
  auto out = open_out(dir / "data.json");
  out << dataset_sidecar(data).dump(2) << '\n';
}

/// Accepts a directory holding data.csv/data.json or a CSV path (sidecar looked up next to it).
inline DataSet load_dataset(const fs::path & where)
{
  const fs::path csv = fs::is_directory(where) ? where / "data.csv" : where;
  DataSet data = read_dataset_csv(csv);
  fs::path sidecar = csv;
  sidecar.replace_extension(".json");
  if (fs::exists(sidecar)) {
    std::ifstream in(sidecar);
    json j;
    try {
      in >> j;
      data.eps_bar = j.at("eps_bar").get<double>();
      data.seed = j.at("seed").get<std::uint64_t>();
      if (j.at("N").get<int>() != data.length() || j.at("m").get<int>() != data.m() || j.at("p").get<int>() != data.p()) {
        throw IoError(sidecar.string() + ": dimensions disagree with " + csv.string());
      }
    } catch (const json::exception & e) {
      throw IoError(sidecar.string() + ": " + e.what());
    }
  } else if (data.y_clean) {
    data.eps_bar = (data.y_noisy - *data.y_clean).cwiseAbs().maxCoeff();
  }
  data.validate();
  return data;
}

// ---------------------------------------------------------------------------
// Closed-loop logs: t,u,y,y_tilde,J_star,alpha_norm,sigma_norm,iters,status

inline std::vector<std::string> log_header(int m, int p)
{
  std::vector<std::string> cols{"t"};
  const bool indexed = m > 1 || p > 1;
  for (auto & c : channel_names("u", m, indexed)) { cols.push_back(c); }
  for (auto & c : channel_names("y", p, indexed)) { cols.push_back(c); }
  for (auto & c : channel_names("y_tilde", p, indexed)) { cols.push_back(c); }
  for (const char * c : {"J_star", "alpha_norm", "sigma_norm", "iters", "status"}) { cols.emplace_back(c); }
  return cols;
}

inline void write_log_csv(const fs::path & path, const ClosedLoopLog & log)
{
  const int m = static_cast<int>(log.init.u.rows());
  const int p = static_cast<int>(log.init.y.rows());
  auto out = open_out(path);
  const auto cols = log_header(m, p);
  for (std::size_t i = 0; i < cols.size(); ++i) { out << (i ? "," : "") << cols[i]; }
  out << '\n';
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto entry = [&](const Vector & v, int i) { return format_double(v.size() ? v(i) : nan); };
  for (const auto & r : log.records) {
    out << r.t;
    for (int i = 0; i < m; ++i) { out << ',' << entry(r.u, i); }
    for (int i = 0; i < p; ++i) { out << ',' << entry(r.y, i); }
    for (int i = 0; i < p; ++i) { out << ',' << entry(r.y_tilde, i); }
    out << ',' << format_double(r.J_star) << ',' << format_double(r.alpha_norm) << ',' << format_double(r.sigma_norm) << ','
        << r.iterations << ',' << to_string(r.status) << '\n';
  }
}

inline QpStatus parse_status(const std::string & s)
{
  if (s == "Solved") { return QpStatus::Solved; }
  if (s == "MaxIter") { return QpStatus::MaxIter; }
  if (s == "Infeasible") { return QpStatus::Infeasible; }
  throw IoError("unknown solver status '" + s + "'");
}

/// Records only; run metadata lives in the summary.
inline ClosedLoopLog read_log_csv(const fs::path & path)
{
  std::vector<std::string> header;
  const auto rows = read_csv(path, header);
  int m = count_prefix(header, "u");
  int p = count_prefix(header, "y");
  const bool indexed = m > 0;
  if (!indexed) {
    m = 1;
    p = 1;
  }
  if (header != log_header(m, p)) { throw IoError(path.string() + ": unexpected log header"); }
  ClosedLoopLog log;
  log.init.u = Matrix::Zero(m, 0);
  log.init.y = Matrix::Zero(p, 0);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto & r = rows[k];
    const std::string where = path.string() + " row " + std::to_string(k + 1);
    StepRecord rec;
    std::size_t c = 0;
    rec.t = static_cast<int>(parse_double(r[c++], where));
    rec.u.resize(m);
    rec.y.resize(p);
    rec.y_tilde.resize(p);
    for (int i = 0; i < m; ++i) { rec.u(i) = parse_double(r[c++], where); }
    for (int i = 0; i < p; ++i) { rec.y(i) = parse_double(r[c++], where); }
    for (int i = 0; i < p; ++i) { rec.y_tilde(i) = parse_double(r[c++], where); }
    rec.J_star = parse_double(r[c++], where);
    rec.alpha_norm = parse_double(r[c++], where);
    rec.sigma_norm = parse_double(r[c++], where);
    rec.iterations = static_cast<int>(parse_double(r[c++], where));
    rec.status = parse_status(r[c++]);
    if (rec.status != QpStatus::Solved) { log.aborted = true; }
    log.records.push_back(std::move(rec));
  }
  return log;
}

/// 64-bit FNV-1a, used to tag runs with the configuration they came from.
inline std::string digest(const std::string & text)
{
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline json to_json(const Vector & v)
{
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline json to_json(const Matrix & a)
{
  json rows = json::array();
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < a.cols(); ++j) { row.push_back(a(i, j)); }
    rows.push_back(row);
  }
  return rows;
}

inline void write_json(const fs::path & path, const json & j)
{
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

inline json read_json(const fs::path & path)
{
  std::ifstream in(path);
  if (!in) { throw IoError("cannot open " + path.string()); }
  try {
    return json::parse(in);
  } catch (const json::exception & e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace io

}  // namespace ddmpc
