#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fcl/continual.hpp"
#include "fcl/dataset.hpp"
#include "fcl/nn.hpp"

namespace fcl {

inline constexpr std::size_t kEvalBatch = 200;

// Eval-mode argmax over all six logits (class-incremental prediction).
inline std::vector<int> predict(const CnnParams &params, const Dataset &data) {
  std::vector<int> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + kEvalBatch); ++i)
      idx.push_back(i);
    const Tensor logits = forward(params, stack_signals(data, idx), Mode::eval);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < kClasses; ++c)
        if (logits.at(b, c) > logits.at(b, best))
          best = c;
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

// Fraction of examples with a label in `classes` that are predicted correctly.
inline double subset_accuracy(const Dataset &data, std::span<const int> predictions, const std::set<int> &classes) {
  if (classes.empty())
    throw UndefinedMetric("subset_accuracy: empty class set");
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (classes.count(data[i].label)) {
      ++total;
      hit += predictions[i] == data[i].label;
    }
  if (total == 0)
    throw UndefinedMetric("subset_accuracy: no test examples of the requested classes");
  return static_cast<double>(hit) / static_cast<double>(total);
}

inline double subset_accuracy(const CnnParams &params, const Dataset &test, const std::set<int> &classes) {
  const auto pred = predict(params, test);
  return subset_accuracy(test, pred, classes);
}

inline double overall_accuracy(const Dataset &data, std::span<const int> predictions) {
  if (data.empty())
    throw UndefinedMetric("accuracy of an empty dataset");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < data.size(); ++i)
    hit += predictions[i] == data[i].label;
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

// One entity's evaluation after a round: a client's returned model or the
// aggregated server model.
struct EntityEval {
  std::string entity;
  double overall = 0.0;                                         // a_0
  std::array<double, kClasses> per_class{};                     // NaN when a class is absent
  int task = 0;                                                 // current task id; 0 for the server
  std::vector<double> task_accuracy;                            // a_{t,d} for d = 1..task
  std::optional<double> personal;                               // a_per, clients only
};

struct RoundRecord {
  int round = 0;
  std::vector<EntityEval> entities;

  const EntityEval &entity(const std::string &name) const {
    for (const EntityEval &e : entities)
      if (e.entity == name)
        return e;
    throw InvalidInput("round " + std::to_string(round) + " has no entity '" + name + "'");
  }
};

// Evaluates a client model. `seq` is nullptr for the server.
inline EntityEval evaluate_entity(const std::string &name, const CnnParams &params, const Dataset &test,
                                  const TaskSequence *seq, int round) {
  const auto pred = predict(params, test);
  EntityEval e;
  e.entity = name;
  e.overall = overall_accuracy(test, pred);
  const auto counts = class_counts(test);
  for (std::size_t c = 0; c < kClasses; ++c)
    e.per_class[c] = counts[c] ? subset_accuracy(test, pred, {static_cast<int>(c)})
                               : std::numeric_limits<double>::quiet_NaN();
  if (seq != nullptr && round >= 1) {
    const TaskSpec &now = current_task(*seq, round);
    e.task = now.task_id;
    for (int d = 1; d <= now.task_id; ++d)
      e.task_accuracy.push_back(subset_accuracy(test, pred, seq->task(d).classes));
    e.personal = subset_accuracy(test, pred, learnt_classes(*seq, round));
  }
  return e;
}

// A_gen = mean over rounds of whole-test accuracy.
inline double general_accuracy(std::span<const double> round_accuracies) {
  if (round_accuracies.empty())
    throw UndefinedMetric("general accuracy needs at least one round");
  double s = 0.0;
  for (double a : round_accuracies)
    s += a;
  return s / static_cast<double>(round_accuracies.size());
}

inline double general_accuracy(std::span<const RoundRecord> records, const std::string &entity) {
  std::vector<double> a;
  for (const RoundRecord &r : records)
    a.push_back(r.entity(entity).overall);
  return general_accuracy(a);
}

// A_per = mean over rounds of the accuracy on the client's learnt classes.
inline double personal_accuracy(std::span<const RoundRecord> records, const std::string &entity) {
  std::vector<double> a;
  for (const RoundRecord &r : records) {
    const EntityEval &e = r.entity(entity);
    if (!e.personal)
      throw UndefinedMetric("personal accuracy is only defined for clients");
    a.push_back(*e.personal);
  }
  return general_accuracy(a);
}

// Mean of a_{t,d} over the rounds in task t's window.
inline double window_accuracy(std::span<const RoundRecord> records, const std::string &entity,
                              const TaskSequence &seq, int t, int d) {
  if (d < 1 || d > t || t > static_cast<int>(seq.size()))
    throw InvalidInput("window_accuracy needs 1 <= d <= t <= n");
  const auto [first, last] = seq.window(t);
  double s = 0.0;
  int n = 0;
  for (const RoundRecord &r : records)
    if (r.round >= first && r.round <= last) {
      const EntityEval &e = r.entity(entity);
      s += e.task_accuracy.at(static_cast<std::size_t>(d - 1));
      ++n;
    }
  if (n == 0)
    throw UndefinedMetric("no recorded rounds inside task " + std::to_string(t) + "'s window");
  return s / n;
}

// A_t = (1/t) sum_{d<=t} window_accuracy(t, d).
inline double avg_accuracy_at_task(std::span<const RoundRecord> records, const std::string &entity,
                                   const TaskSequence &seq, int t) {
  if (t < 1 || t > static_cast<int>(seq.size()))
    throw InvalidInput("task index out of range");
  double s = 0.0;
  for (int d = 1; d <= t; ++d)
    s += window_accuracy(records, entity, seq, t, d);
  return s / t;
}

// f_{t,d} from window averages: best accuracy on d while learning tasks
// d..t-1, minus the accuracy on d while learning t.
inline double forgetting_from_windows(std::span<const double> history, double current) {
  if (history.empty())
    throw InvalidInput("forgetting needs d < t");
  return *std::max_element(history.begin(), history.end()) - current;
}

inline double forgetting(std::span<const RoundRecord> records, const std::string &entity, const TaskSequence &seq,
                         int t, int d) {
  if (d < 1 || d >= t)
    throw InvalidInput("forgetting f_{t,d} needs 1 <= d < t");
  std::vector<double> history;
  for (int i = d; i < t; ++i)
    history.push_back(window_accuracy(records, entity, seq, i, d));
  return forgetting_from_windows(history, window_accuracy(records, entity, seq, t, d));
}

// F_t = mean over d < t of f_{t,d}.
inline double average_forgetting(std::span<const RoundRecord> records, const std::string &entity,
                                 const TaskSequence &seq, int t) {
  if (t < 2)
    throw InvalidInput("average forgetting needs t >= 2");
  double s = 0.0;
  for (int d = 1; d < t; ++d)
    s += forgetting(records, entity, seq, t, d);
  return s / (t - 1);
}

struct EntityMetrics {
  double general = 0.0;
  std::optional<double> personal;
  std::map<int, double> avg_accuracy;             // A_t
  std::map<int, double> avg_forgetting;           // F_t, t >= 2
  std::map<std::pair<int, int>, double> forgetting; // f_{t,d}
};

struct MetricsReport {
  std::map<std::string, EntityMetrics> entities;
};

struct ClientDescriptor {
  std::string name;
  TaskSequence tasks;
};

// Continual metrics are reported only for clients whose sequence has more
// than one task; general accuracy for everyone.
inline MetricsReport compute_report(std::span<const RoundRecord> records, std::span<const ClientDescriptor> clients,
                                    const std::string &server_name) {
  MetricsReport rep;
  if (records.empty())
    return rep;
  for (const ClientDescriptor &c : clients) {
    EntityMetrics m;
    m.general = general_accuracy(records, c.name);
    m.personal = personal_accuracy(records, c.name);
    const int n = static_cast<int>(c.tasks.size());
    const int last_round = records.back().round;
    for (int t = 1; t <= n; ++t) {
      if (c.tasks.window(t).second > last_round)
        break;
      m.avg_accuracy[t] = avg_accuracy_at_task(records, c.name, c.tasks, t);
      if (t >= 2) {
        for (int d = 1; d < t; ++d)
          m.forgetting[{t, d}] = forgetting(records, c.name, c.tasks, t, d);
        m.avg_forgetting[t] = average_forgetting(records, c.name, c.tasks, t);
      }
    }
    rep.entities[c.name] = std::move(m);
  }
  EntityMetrics s;
  s.general = general_accuracy(records, server_name);
  rep.entities[server_name] = s;
  return rep;
}

// --- principal components -------------------------------------------------

struct PcaResult {
  RowMatrix components;                 // [k, dim], unit rows
  std::vector<double> eigenvalues;      // sample covariance eigenvalues, descending
  std::vector<double> explained_ratio;  // eigenvalue / total variance
  RowMatrix coordinates;                // [n, k] projections of the centered data
  std::string warning;
};

struct PowerIterationOptions {
  // Stop once ||C v - lambda v|| <= tolerance * lambda.
  double tolerance = 1e-11;
  int max_iterations = 100000;
  // Eigenvalues below relative_floor * largest count as zero variance.
  double relative_floor = 1e-12;
};

// Top principal directions of the rows of `data` by power iteration on the
// sample covariance, deflating by re-orthogonalizing each iterate against
// the directions already found.
inline PcaResult pca_power(const RowMatrix &data, std::size_t n_components,
                           const PowerIterationOptions &opt = {}) {
  const Eigen::Index n = data.rows();
  const Eigen::Index dim = data.cols();
  if (n < 2 || dim < 1)
    throw InvalidInput("pca needs at least two rows");
  const Eigen::RowVectorXd mean = data.colwise().mean();
  const RowMatrix centered = data.rowwise() - mean;
  const RowMatrix cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  const double total = cov.trace();

  PcaResult res;
  const std::size_t want = std::min<std::size_t>(n_components, static_cast<std::size_t>(dim));
  std::vector<Eigen::VectorXd> found;
  for (std::size_t k = 0; k < want; ++k) {
    // Deterministic, generic start vector.
    Eigen::VectorXd v(dim);
    for (Eigen::Index i = 0; i < dim; ++i)
      v(i) = 1.0 + 0.618033988749895 * static_cast<double>((i * 7919 + static_cast<Eigen::Index>(k) * 104729) % 1009) / 1009.0;
    auto deflate = [&](Eigen::VectorXd &x) {
      for (const auto &u : found)
        x -= u.dot(x) * u;
    };
    deflate(v);
    if (v.norm() == 0.0)
      break;
    v.normalize();
    double lambda = 0.0;
    for (int it = 0; it < opt.max_iterations; ++it) {
      Eigen::VectorXd w = cov * v;
      deflate(w);
      lambda = v.dot(w);
      const double residual = (w - lambda * v).norm();
      const double nw = w.norm();
      if (nw == 0.0)
        break;
      v = w / nw;
      if (residual <= opt.tolerance * std::max(std::abs(lambda), std::numeric_limits<double>::min()))
        break;
    }
    deflate(v);
    if (v.norm() == 0.0)
      break;
    v.normalize();
    {
      Eigen::VectorXd w = cov * v;
      deflate(w);
      lambda = v.dot(w);
    }
    const double largest = res.eigenvalues.empty() ? lambda : res.eigenvalues.front();
    if (!(lambda > opt.relative_floor * std::max(largest, std::numeric_limits<double>::min()))) {
      res.warning = "input has only " + std::to_string(k) + " direction(s) with nonzero variance; returning " +
                    std::to_string(k) + " of " + std::to_string(n_components) + " components";
      break;
    }
    // Sign convention: largest-magnitude entry positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0)
      v = -v;
    found.push_back(v);
    res.eigenvalues.push_back(lambda);
    res.explained_ratio.push_back(total > 0 ? lambda / total : 0.0);
  }
  if (res.warning.empty() && found.size() < n_components)
    res.warning = "requested " + std::to_string(n_components) + " components but the data has dimension " +
                  std::to_string(dim);
  res.components = RowMatrix(static_cast<Eigen::Index>(found.size()), dim);
  for (std::size_t k = 0; k < found.size(); ++k)
    res.components.row(static_cast<Eigen::Index>(k)) = found[k].transpose();
  res.coordinates = centered * res.components.transpose();
  return res;
}

enum class PcaLayer { hidden, logits };

struct PcaExport {
  std::vector<int> labels;
  PcaResult pca;
};

// Samples per_class examples of every class present, takes the chosen layer
// (1024-unit pre-ReLU activations or the 6 logits) in eval mode and projects
// onto the top principal components.
inline PcaExport pca_last_layer(const CnnParams &params, const Dataset &data, std::size_t n_components = 3,
                                std::size_t per_class = 200, PcaLayer layer = PcaLayer::hidden,
                                std::uint64_t seed = 1) {
  std::array<std::vector<std::size_t>, kClasses> by_class;
  for (std::size_t i = 0; i < data.size(); ++i)
    by_class.at(static_cast<std::size_t>(data[i].label)).push_back(i);
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < kClasses; ++c) {
    auto &ids = by_class[c];
    if (ids.empty())
      continue;
    if (ids.size() < per_class)
      throw InvalidInput("pca: class " + std::to_string(c) + " has " + std::to_string(ids.size()) +
                         " examples, need " + std::to_string(per_class));
    Rng rng = make_rng(seed, SeedPurpose::pca_sample, {c});
    shuffle(ids.begin(), ids.end(), rng);
    chosen.insert(chosen.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(per_class));
  }
  if (chosen.size() < 2)
    throw InvalidInput("pca: not enough examples");
  const std::size_t width = layer == PcaLayer::hidden ? kHidden : kClasses;
  RowMatrix act(static_cast<Eigen::Index>(chosen.size()), static_cast<Eigen::Index>(width));
  PcaExport out;
  for (std::size_t start = 0; start < chosen.size(); start += kEvalBatch) {
    const std::size_t end = std::min(chosen.size(), start + kEvalBatch);
    std::span<const std::size_t> sel(chosen.data() + start, end - start);
    const ForwardTrace tr = forward_trace(params, stack_signals(data, sel), Mode::eval, 0);
    const Tensor &src = layer == PcaLayer::hidden ? tr.hidden_pre : tr.logits;
    act.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(sel.size())) = src.matrix();
  }
  for (std::size_t i : chosen)
    out.labels.push_back(data[i].label);
  out.pca = pca_power(act, n_components);
  return out;
}

} // namespace fcl
