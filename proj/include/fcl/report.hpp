#pragma once

// On-disk artifacts of a run and the side-by-side comparison of runs.
//
// A run directory holds:
//   config.resolved        every config key, re-runnable as is
//   pretrain.csv           accuracies of the shared initial model
//   rounds_<entity>.csv    one row per round for client1, generalized, server
//   summary.csv            entity,metric,value (A_gen, A_per, A_t, F_t, f_t_d)
//   pca.csv, pca_variance.csv   when PCA export is enabled
//   timing.txt             wall-clock seconds; the only non-deterministic file

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "fcl/config.hpp"
#include "fcl/federated.hpp"
#include "fcl/metrics.hpp"

namespace fcl {

namespace detail {

inline std::string num(double v) { return std::isnan(v) ? std::string("nan") : fmt::format("{:.10f}", v); }

inline void write_file(const std::filesystem::path &p, const std::string &text) {
  std::ofstream os(p, std::ios::binary);
  if (!os)
    throw Error("cannot write " + p.string());
  os << text;
}

inline std::string per_class_header() {
  std::string h;
  for (std::size_t c = 0; c < kClasses; ++c)
    h += fmt::format(",acc_c{}", c);
  return h;
}

inline std::string per_class_values(const EntityEval &e) {
  std::string s;
  for (double v : e.per_class)
    s += "," + num(v);
  return s;
}

} // namespace detail

inline std::string rounds_csv(const std::vector<RoundRecord> &records, const std::string &entity) {
  std::size_t tasks = 0;
  bool client = false;
  for (const RoundRecord &r : records) {
    const EntityEval &e = r.entity(entity);
    tasks = std::max(tasks, e.task_accuracy.size());
    client = client || e.personal.has_value();
  }
  std::string out = "round,overall" + detail::per_class_header();
  if (client) {
    out += ",task";
    for (std::size_t d = 1; d <= tasks; ++d)
      out += fmt::format(",task_acc_{}", d);
    out += ",personal";
  }
  out += "\n";
  for (const RoundRecord &r : records) {
    const EntityEval &e = r.entity(entity);
    out += std::to_string(r.round) + "," + detail::num(e.overall) + detail::per_class_values(e);
    if (client) {
      out += "," + std::to_string(e.task);
      for (std::size_t d = 0; d < tasks; ++d)
        out += "," + (d < e.task_accuracy.size() ? detail::num(e.task_accuracy[d]) : std::string());
      out += "," + (e.personal ? detail::num(*e.personal) : std::string());
    }
    out += "\n";
  }
  return out;
}

inline std::string summary_csv(const MetricsReport &rep) {
  std::string out = "entity,metric,value\n";
  for (const auto &[name, m] : rep.entities) {
    out += name + ",A_gen," + detail::num(m.general) + "\n";
    if (m.personal)
      out += name + ",A_per," + detail::num(*m.personal) + "\n";
    for (const auto &[t, a] : m.avg_accuracy)
      out += fmt::format("{},A_{},{}\n", name, t, detail::num(a));
    for (const auto &[t, f] : m.avg_forgetting)
      out += fmt::format("{},F_{},{}\n", name, t, detail::num(f));
    for (const auto &[td, f] : m.forgetting)
      out += fmt::format("{},f_{}_{},{}\n", name, td.first, td.second, detail::num(f));
  }
  return out;
}

inline std::string pca_csv(const PcaExport &p) {
  std::string out = "label";
  for (Eigen::Index k = 0; k < p.pca.coordinates.cols(); ++k)
    out += fmt::format(",c{}", k + 1);
  out += "\n";
  for (Eigen::Index i = 0; i < p.pca.coordinates.rows(); ++i) {
    out += std::to_string(p.labels[static_cast<std::size_t>(i)]);
    for (Eigen::Index k = 0; k < p.pca.coordinates.cols(); ++k)
      out += "," + detail::num(p.pca.coordinates(i, k));
    out += "\n";
  }
  return out;
}

inline std::string pca_variance_csv(const PcaExport &p) {
  std::string out = "component,eigenvalue,explained_ratio\n";
  for (std::size_t k = 0; k < p.pca.eigenvalues.size(); ++k)
    out += fmt::format("{},{},{}\n", k + 1, detail::num(p.pca.eigenvalues[k]), detail::num(p.pca.explained_ratio[k]));
  return out;
}

inline void write_run_artifacts(const ExperimentResult &res, const std::filesystem::path &dir,
                                const PcaExport *pca = nullptr) {
  std::filesystem::create_directories(dir);
  detail::write_file(dir / "config.resolved", res.config_echo);
  detail::write_file(dir / "pretrain.csv", rounds_csv({res.pretrain}, kServerName));
  std::vector<std::string> entities;
  for (const ClientDescriptor &c : res.clients)
    entities.push_back(c.name);
  if (!res.records.empty())
    entities.push_back(kServerName);
  for (const std::string &e : entities)
    detail::write_file(dir / ("rounds_" + e + ".csv"), rounds_csv(res.records, e));
  detail::write_file(dir / "summary.csv", summary_csv(res.report));
  if (pca != nullptr) {
    detail::write_file(dir / "pca.csv", pca_csv(*pca));
    detail::write_file(dir / "pca_variance.csv", pca_variance_csv(*pca));
  }
  detail::write_file(dir / "timing.txt", fmt::format("seconds={:.3f}\n", res.seconds));
}

// --- comparison ----------------------------------------------------------

struct ComparisonRow {
  std::string method;
  std::string source;
  // A_gen^1, A_gen^g, A_gen^server, A_per^1, A_2^1, F_2^1
  std::array<std::optional<double>, 6> values;
};

inline const std::array<std::string, 6> &comparison_columns() {
  static const std::array<std::string, 6> cols{"A_gen^1", "A_gen^g", "A_gen^server", "A_per^1", "A_2^1", "F_2^1"};
  return cols;
}

inline std::map<std::pair<std::string, std::string>, double> read_summary(const std::filesystem::path &file) {
  std::ifstream in(file);
  if (!in)
    throw Error("cannot read " + file.string());
  std::map<std::pair<std::string, std::string>, double> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string entity, metric, value;
    if (std::getline(ss, entity, ',') && std::getline(ss, metric, ',') && std::getline(ss, value))
      out[{entity, metric}] = std::strtod(value.c_str(), nullptr);
  }
  return out;
}

// One row per result directory. Metrics a run did not produce stay empty.
inline std::vector<ComparisonRow> compare_results(const std::vector<std::filesystem::path> &dirs) {
  if (dirs.empty())
    throw InvalidInput("compare: no result directories given");
  std::vector<ComparisonRow> rows;
  for (const auto &dir : dirs) {
    ComparisonRow row;
    row.source = dir.string();
    try {
      row.method = method_name(parse_config(dir / "config.resolved"));
    } catch (const Error &) {
      row.method = dir.filename().string();
    }
    std::map<std::pair<std::string, std::string>, double> s;
    if (std::filesystem::exists(dir / "summary.csv"))
      s = read_summary(dir / "summary.csv");
    const std::array<std::pair<std::string, std::string>, 6> keys{{{kClient1Name, "A_gen"},
                                                                   {kGeneralizedName, "A_gen"},
                                                                   {kServerName, "A_gen"},
                                                                   {kClient1Name, "A_per"},
                                                                   {kClient1Name, "A_2"},
                                                                   {kClient1Name, "F_2"}}};
    for (std::size_t i = 0; i < keys.size(); ++i)
      if (auto it = s.find(keys[i]); it != s.end())
        row.values[i] = it->second;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_comparison(const std::vector<ComparisonRow> &rows) {
  std::size_t w = 6;
  for (const ComparisonRow &r : rows)
    w = std::max(w, r.method.size());
  std::string out = fmt::format("{:<{}}", "Method", w);
  for (const std::string &c : comparison_columns())
    out += fmt::format(" | {:>12}", c);
  out += "\n" + std::string(w, '-');
  for (std::size_t i = 0; i < comparison_columns().size(); ++i)
    out += "-+-" + std::string(12, '-');
  out += "\n";
  for (const ComparisonRow &r : rows) {
    out += fmt::format("{:<{}}", r.method, w);
    for (const auto &v : r.values)
      out += v ? fmt::format(" | {:>12.3f}", *v) : fmt::format(" | {:>12}", "-");
    out += "\n";
  }
  return out;
}

} // namespace fcl
