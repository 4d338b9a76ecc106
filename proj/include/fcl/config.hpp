#pragma once

// Experiment configuration as a flat `key = value` text file.
//
//   # comment
//   R = 8
//   strategy.client1 = FLwF2T
//
// Unset keys take the defaults below; unknown or repeated keys are errors.
// serialize_config writes every key in a fixed order, and parsing that text
// reproduces the same configuration (and, re-serialized, the same bytes).

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "fcl/data.hpp"
#include "fcl/metrics.hpp"
#include "fcl/training.hpp"

namespace fcl {

struct ExperimentConfig {
  std::string label;                    // method name in comparison tables; empty = derived
  std::string dataset = "synthetic";    // "synthetic" or the UCI HAR root directory
  std::size_t synthetic_per_class = 800;
  std::vector<std::string> channels = default_channels();
  bool standardize = true;
  std::string cache;                    // optional binary cache for the UCI pool

  int R = 8;
  std::size_t E = 10;
  std::size_t K = 5;
  std::size_t B = 32;
  double eta = 0.01;
  double dropout = 0.5;
  std::size_t round_size = 120;
  std::size_t test_per_class = 100;
  std::size_t pretrain_per_class = 10;
  std::size_t pretrain_epochs = 60;
  double pretrain_eta = 0.01;
  double T = 2.0;
  double alpha = 0.001;
  double beta = 0.7;
  std::size_t m_ex = 10;
  bool use_exemplars = false;
  Strategy strategy_client1 = Strategy::flwf2t;
  Strategy strategy_generalized = Strategy::ft;
  std::uint64_t master_seed = 1;
  std::string output_dir = "out";

  bool pca = false;
  PcaLayer pca_layer = PcaLayer::hidden;
  std::size_t pca_per_class = 200;

  LocalTraining local_training() const { return {E, B, eta, dropout, {T, alpha, beta}}; }

  friend bool operator==(const ExperimentConfig &, const ExperimentConfig &) = default;
};

// Method name in the style of the result tables: FCL-FT, FLwF, FLwF-2T,
// FLwF-2T/FT, with " + ex" when exemplars are replayed.
inline std::string method_name(const ExperimentConfig &cfg) {
  if (!cfg.label.empty())
    return cfg.label;
  auto table_name = [](Strategy s) {
    return s == Strategy::ft ? std::string("FCL-FT") : s == Strategy::flwf ? std::string("FLwF") : std::string("FLwF-2T");
  };
  std::string name;
  if (cfg.K < 2 || cfg.strategy_client1 == cfg.strategy_generalized)
    name = table_name(cfg.strategy_client1);
  else
    name = table_name(cfg.strategy_client1) + "/" +
           (cfg.strategy_generalized == Strategy::ft ? std::string("FT") : table_name(cfg.strategy_generalized));
  if (cfg.use_exemplars)
    name += " + ex";
  return name;
}

namespace detail {

inline std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) { return fmt::format("{}", v); }

class ConfigFields {
public:
  explicit ConfigFields(ExperimentConfig &cfg) {
    text("label", cfg.label);
    text("dataset", cfg.dataset);
    count("synthetic_per_class", cfg.synthetic_per_class, 1);
    list("channels", cfg.channels);
    flag("standardize", cfg.standardize);
    text("cache", cfg.cache);
    add("R", [&cfg](const std::string &v, const std::string &k) { cfg.R = static_cast<int>(parse_count(v, k, 0)); },
        [&cfg] { return std::to_string(cfg.R); });
    count("E", cfg.E, 0);
    count("K", cfg.K, 1);
    count("B", cfg.B, 1);
    real("eta", cfg.eta, 0.0, 1e6, "must be >= 0");
    real("dropout", cfg.dropout, 0.0, 0.999999, "must lie in [0, 1)");
    count("round_size", cfg.round_size, 1);
    count("test_per_class", cfg.test_per_class, 1);
    count("pretrain_per_class", cfg.pretrain_per_class, 1);
    count("pretrain_epochs", cfg.pretrain_epochs, 0);
    real("pretrain_eta", cfg.pretrain_eta, 0.0, 1e6, "must be >= 0");
    real("T", cfg.T, 1e-300, 1e300, "must be > 0");
    real("alpha", cfg.alpha, 0.0, 1.0, "must lie in [0, 1]");
    real("beta", cfg.beta, 0.0, 1.0, "must lie in [0, 1]");
    count("m_ex", cfg.m_ex, 0);
    flag("use_exemplars", cfg.use_exemplars);
    strategy("strategy.client1", cfg.strategy_client1);
    strategy("strategy.generalized", cfg.strategy_generalized);
    add("master_seed",
        [&cfg](const std::string &v, const std::string &k) { cfg.master_seed = parse_count(v, k, 0); },
        [&cfg] { return std::to_string(cfg.master_seed); });
    text("output_dir", cfg.output_dir);
    flag("pca", cfg.pca);
    add("pca_layer",
        [&cfg](const std::string &v, const std::string &k) {
          if (v == "hidden")
            cfg.pca_layer = PcaLayer::hidden;
          else if (v == "logits")
            cfg.pca_layer = PcaLayer::logits;
          else
            throw ConfigError(k + ": must be 'hidden' or 'logits', got '" + v + "'");
        },
        [&cfg] { return std::string(cfg.pca_layer == PcaLayer::hidden ? "hidden" : "logits"); });
    count("pca_per_class", cfg.pca_per_class, 1);
  }

  struct Field {
    std::string key;
    std::function<void(const std::string &, const std::string &)> set;
    std::function<std::string()> get;
  };
  const std::vector<Field> &fields() const { return fields_; }

  static std::uint64_t parse_count(const std::string &v, const std::string &key, std::uint64_t min) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    errno = 0;
    const auto x = std::strtoull(v.c_str(), nullptr, 10);
    if (errno == ERANGE)
      throw ConfigError(key + ": integer out of range");
    if (x < min)
      throw ConfigError(key + ": must be >= " + std::to_string(min) + ", got " + v);
    return x;
  }

private:
  void add(std::string key, std::function<void(const std::string &, const std::string &)> set,
           std::function<std::string()> get) {
    fields_.push_back({std::move(key), std::move(set), std::move(get)});
  }
  void text(const char *key, std::string &dst) {
    add(key, [&dst](const std::string &v, const std::string &) { dst = v; }, [&dst] { return dst; });
  }
  void count(const char *key, std::size_t &dst, std::uint64_t min) {
    add(key, [&dst, min](const std::string &v, const std::string &k) { dst = parse_count(v, k, min); },
        [&dst] { return std::to_string(dst); });
  }
  void real(const char *key, double &dst, double lo, double hi, const char *constraint) {
    add(key,
        [&dst, lo, hi, constraint](const std::string &v, const std::string &k) {
          char *end = nullptr;
          errno = 0;
          const double x = std::strtod(v.c_str(), &end);
          if (v.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(x))
            throw ConfigError(k + ": expected a real number, got '" + v + "'");
          if (x < lo || x > hi)
            throw ConfigError(k + ": " + constraint + ", got " + v);
          dst = x;
        },
        [&dst] { return fmt_double(dst); });
  }
  void flag(const char *key, bool &dst) {
    add(key,
        [&dst](const std::string &v, const std::string &k) {
          if (v == "true")
            dst = true;
          else if (v == "false")
            dst = false;
          else
            throw ConfigError(k + ": expected true or false, got '" + v + "'");
        },
        [&dst] { return std::string(dst ? "true" : "false"); });
  }
  void list(const char *key, std::vector<std::string> &dst) {
    add(key,
        [&dst](const std::string &v, const std::string &k) {
          std::vector<std::string> out;
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ','))
            if (!trim(item).empty())
              out.push_back(trim(item));
          if (out.empty())
            throw ConfigError(k + ": empty list");
          dst = out;
        },
        [&dst] {
          std::string s;
          for (std::size_t i = 0; i < dst.size(); ++i)
            s += (i ? "," : "") + dst[i];
          return s;
        });
  }
  void strategy(const char *key, Strategy &dst) {
    add(key,
        [&dst](const std::string &v, const std::string &k) {
          const auto s = parse_strategy(v);
          if (!s)
            throw ConfigError(k + ": strategy must be one of FT, FLwF, FLwF2T, got '" + v + "'");
          dst = *s;
        },
        [&dst] { return to_string(dst); });
  }

  std::vector<Field> fields_;
};

} // namespace detail

// Cross-field constraints.
inline void validate_config(const ExperimentConfig &cfg) {
  if (cfg.alpha + cfg.beta > 1.0 + 1e-12)
    throw ConfigError("alpha + beta must not exceed 1 (got " + detail::fmt_double(cfg.alpha) + " + " +
                      detail::fmt_double(cfg.beta) + ")");
  if (cfg.R > 0 && cfg.R % 2 != 0)
    throw ConfigError("R: the two-task client scenario needs an even number of rounds, got " + std::to_string(cfg.R));
  if (cfg.channels.empty())
    throw ConfigError("channels: empty list");
  if (cfg.dataset.empty())
    throw ConfigError("dataset: must be 'synthetic' or a directory");
}

inline ExperimentConfig parse_config_text(const std::string &text) {
  ExperimentConfig cfg;
  detail::ConfigFields fields(cfg);
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line.resize(hash);
    line = detail::trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = std::find_if(fields.fields().begin(), fields.fields().end(),
                                 [&](const auto &f) { return f.key == key; });
    if (it == fields.fields().end())
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second)
      throw ConfigError("line " + std::to_string(line_no) + ": key '" + key + "' given twice");
    it->set(value, key);
  }
  validate_config(cfg);
  return cfg;
}

inline ExperimentConfig parse_config(const std::filesystem::path &file) {
  std::ifstream in(file);
  if (!in)
    throw ConfigError("cannot read config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline std::string serialize_config(const ExperimentConfig &cfg) {
  ExperimentConfig copy = cfg;
  detail::ConfigFields fields(copy);
  std::string out;
  for (const auto &f : fields.fields())
    out += f.key + " = " + f.get() + "\n";
  return out;
}

} // namespace fcl
