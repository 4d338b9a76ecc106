#pragma once

// Task sequences of the class-incremental scenarios and the per-client
// exemplar memory.

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fcl/dataset.hpp"
#include "fcl/seed.hpp"

namespace fcl {

struct TaskSpec {
  int task_id = 1;
  std::set<int> classes;
  int round_budget = 1;

  friend bool operator==(const TaskSpec &, const TaskSpec &) = default;
};

class TaskSequence {
public:
  TaskSequence() = default;

  // Checks task ids 1..n, nonempty pairwise-disjoint class sets and
  // positive budgets.
  explicit TaskSequence(std::vector<TaskSpec> tasks) : tasks_(std::move(tasks)) {
    std::set<int> seen;
    for (std::size_t i = 0; i < tasks_.size(); ++i) {
      const TaskSpec &t = tasks_[i];
      if (t.task_id != static_cast<int>(i) + 1)
        throw ConfigError("task ids must run 1..n in order");
      if (t.classes.empty())
        throw ConfigError("task " + std::to_string(t.task_id) + " has no classes");
      if (t.round_budget < 1)
        throw ConfigError("task " + std::to_string(t.task_id) + " needs a round budget >= 1");
      for (int c : t.classes) {
        if (c < 0 || c >= static_cast<int>(kClasses))
          throw ConfigError("class " + std::to_string(c) + " outside 0..5");
        if (!seen.insert(c).second)
          throw ConfigError("class " + std::to_string(c) + " appears in two tasks");
      }
    }
  }

  const std::vector<TaskSpec> &tasks() const { return tasks_; }
  std::size_t size() const { return tasks_.size(); }
  const TaskSpec &task(int task_id) const { return tasks_.at(static_cast<std::size_t>(task_id - 1)); }

  int total_rounds() const {
    int r = 0;
    for (const TaskSpec &t : tasks_)
      r += t.round_budget;
    return r;
  }

  // Rounds [first, last] (1-based, inclusive) during which task_id is trained.
  std::pair<int, int> window(int task_id) const {
    int first = 1;
    for (const TaskSpec &t : tasks_) {
      if (t.task_id == task_id)
        return {first, first + t.round_budget - 1};
      first += t.round_budget;
    }
    throw InvalidInput("no task " + std::to_string(task_id));
  }

  friend bool operator==(const TaskSequence &, const TaskSequence &) = default;

private:
  std::vector<TaskSpec> tasks_;
};

// Observed client: Walking Up for R/2 rounds, then Walking Down for R/2.
inline TaskSequence scenario_client1(int rounds) {
  if (rounds < 2 || rounds % 2 != 0)
    throw ConfigError("the two-task client scenario needs an even round count >= 2, got " +
                      std::to_string(rounds));
  return TaskSequence({{1, {1}, rounds / 2}, {2, {2}, rounds / 2}});
}

// Generalized client: one task over all six classes for all R rounds.
inline TaskSequence scenario_generalized(int rounds) {
  if (rounds < 1)
    throw ConfigError("the generalized client scenario needs at least one round");
  return TaskSequence({{1, {0, 1, 2, 3, 4, 5}, rounds}});
}

inline const TaskSpec &current_task(const TaskSequence &seq, int round) {
  int before = 0;
  for (const TaskSpec &t : seq.tasks()) {
    if (before < round && round <= before + t.round_budget)
      return t;
    before += t.round_budget;
  }
  throw InvalidInput("round " + std::to_string(round) + " outside 1.." +
                     std::to_string(seq.total_rounds()));
}

// Union of the classes of every task seen up to and including `round`.
inline std::set<int> learnt_classes(const TaskSequence &seq, int round) {
  const int t_now = current_task(seq, round).task_id;
  std::set<int> out;
  for (const TaskSpec &t : seq.tasks())
    if (t.task_id <= t_now)
      out.insert(t.classes.begin(), t.classes.end());
  return out;
}

inline constexpr std::size_t kDefaultExemplarsPerTask = 10;

struct ExemplarStore {
  std::size_t per_task = kDefaultExemplarsPerTask;
  std::map<int, Dataset> slots;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto &[task, ex] : slots)
      n += ex.size();
    return n;
  }
};

// A new task gets per_task randomly chosen examples; a known task has its
// slot replaced by a fresh random draw. Other slots are left alone.
inline ExemplarStore exemplar_update(ExemplarStore store, int task_id, const Dataset &examples, Rng &rng) {
  std::vector<std::size_t> idx = all_indices(examples);
  const std::size_t keep = std::min(store.per_task, idx.size());
  for (std::size_t i = 0; i < keep; ++i)
    std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
  Dataset slot;
  slot.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i)
    slot.push_back(examples[idx[i]]);
  store.slots[task_id] = std::move(slot);
  return store;
}

// Fresh data, plus the exemplars of every other task when enabled.
inline Dataset compose_round_dataset(const Dataset &fresh, const ExemplarStore &store, bool use_exemplars,
                                     int current_task_id) {
  Dataset out = fresh;
  if (!use_exemplars)
    return out;
  for (const auto &[task, ex] : store.slots)
    if (task != current_task_id)
      out.insert(out.end(), ex.begin(), ex.end());
  return out;
}

} // namespace fcl
