#pragma once

// Server side of the protocol: synchronous rounds of client updates, FedAvg
// aggregation weighted by dataset size, redistribution of the global model.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fcl/config.hpp"
#include "fcl/continual.hpp"
#include "fcl/data.hpp"
#include "fcl/metrics.hpp"
#include "fcl/nn.hpp"
#include "fcl/training.hpp"

namespace fcl {

inline const std::string kServerName = "server";
inline const std::string kClient1Name = "client1";
inline const std::string kGeneralizedName = "generalized";

struct ClientState {
  int id = 1;
  std::string name;
  CnnParams current;    // model returned in the last round
  CnnParams prev;       // teacher for the next round; pre-trained init before round 1
  Strategy strategy = Strategy::ft;
  ExemplarStore exemplars;
  TaskSequence tasks;
  // Number of real clients this simulated client stands for; its FedAvg
  // weight is weight_multiplier * |D_kr|.
  std::size_t weight_multiplier = 1;
};

struct ServerState {
  CnnParams global;
  int round = 0;
};

struct AggregationWeights {
  std::vector<double> counts; // m_k

  double total() const {
    double m = 0.0;
    for (double c : counts)
      m += c;
    return m;
  }
};

// theta = sum_k (m_k / m) theta_k.
inline CnnParams aggregate(std::span<const CnnParams> models, const AggregationWeights &weights) {
  if (models.empty())
    throw InvalidInput("aggregate: no models");
  if (weights.counts.size() != models.size())
    throw InvalidInput("aggregate: " + std::to_string(models.size()) + " models but " +
                       std::to_string(weights.counts.size()) + " weights");
  for (double c : weights.counts)
    if (!(c > 0.0) || !std::isfinite(c))
      throw InvalidInput("aggregate: sample counts must be positive");
  for (const CnnParams &m : models)
    require_congruent(models.front(), m, "aggregate");
  const double total = weights.total();
  CnnParams out = models.front();
  auto dst = out.groups();
  for (std::size_t g = 0; g < dst.size(); ++g) {
    VectorMap d(dst[g]->data().data(), static_cast<Eigen::Index>(dst[g]->size()));
    d.setZero();
    for (std::size_t k = 0; k < models.size(); ++k) {
      const Tensor &src = *models[k].groups()[g];
      d += (weights.counts[k] / total) * ConstVectorMap(src.data().data(), static_cast<Eigen::Index>(src.size()));
    }
  }
  return out;
}

struct RoundSettings {
  LocalTraining training;
  bool use_exemplars = false;
  std::uint64_t master_seed = 1;
};

struct RoundOutcome {
  ServerState server;
  std::vector<ClientState> clients;
  RoundRecord record;
};

// One communication round. Every client starts from the same global model;
// aggregation runs after all clients finish. Records evaluations of each
// returned client model and of the new global model on the common test set.
inline RoundOutcome run_round(ServerState server, std::vector<ClientState> clients,
                              std::span<const Dataset> round_data, const Dataset &test,
                              const RoundSettings &settings) {
  if (round_data.size() != clients.size())
    throw InvalidInput("run_round: data for " + std::to_string(round_data.size()) + " clients, expected " +
                       std::to_string(clients.size()));
  const int round = server.round + 1;

  std::vector<CnnParams> returned;
  AggregationWeights weights;
  returned.reserve(clients.size());
  for (std::size_t k = 0; k < clients.size(); ++k) {
    ClientState &c = clients[k];
    const TaskSpec &task = current_task(c.tasks, round);
    const Dataset train = compose_round_dataset(round_data[k], c.exemplars, settings.use_exemplars, task.task_id);
    returned.push_back(client_update(c.id, round, server.global, c.prev, train, c.strategy, settings.training,
                                     settings.master_seed));
    weights.counts.push_back(static_cast<double>(train.size() * c.weight_multiplier));
    if (settings.use_exemplars) {
      Rng rng = make_rng(settings.master_seed, SeedPurpose::exemplar,
                         {static_cast<std::uint64_t>(c.id), static_cast<std::uint64_t>(round)});
      c.exemplars = exemplar_update(std::move(c.exemplars), task.task_id, round_data[k], rng);
    }
  }

  RoundOutcome out;
  out.server.global = aggregate(returned, weights);
  out.server.round = round;
  out.record.round = round;
  for (std::size_t k = 0; k < clients.size(); ++k) {
    ClientState &c = clients[k];
    out.record.entities.push_back(evaluate_entity(c.name, returned[k], test, &c.tasks, round));
    c.current = returned[k];
    c.prev = std::move(returned[k]);
  }
  out.record.entities.push_back(evaluate_entity(kServerName, out.server.global, test, nullptr, round));
  out.clients = std::move(clients);
  return out;
}

struct ExperimentResult {
  std::string config_echo;
  RoundRecord pretrain;               // round 0: the shared initial model
  std::vector<RoundRecord> records;   // rounds 1..R
  std::vector<ClientDescriptor> clients;
  MetricsReport report;
  CnnParams final_global;
  double seconds = 0.0;
};

// Observed two-task client, plus the generalized client standing in for the
// other K-1 clients when K >= 2.
inline std::vector<ClientDescriptor> scenario_clients(const ExperimentConfig &cfg) {
  std::vector<ClientDescriptor> out;
  if (cfg.R == 0)
    return out;
  out.push_back({kClient1Name, scenario_client1(cfg.R)});
  if (cfg.K >= 2)
    out.push_back({kGeneralizedName, scenario_generalized(cfg.R)});
  return out;
}

// The example pool named by the config, standardized per channel.
inline Dataset load_universe(const ExperimentConfig &cfg) {
  Dataset universe;
  std::size_t stats_rows = 0;
  if (cfg.dataset == "synthetic") {
    universe = make_synthetic(derive_seed(cfg.master_seed, SeedPurpose::synthetic), cfg.synthetic_per_class,
                              cfg.channels.size());
    stats_rows = universe.size();
  } else {
    // The cache keeps the two UCI splits in <cache>.train and <cache>.test.
    const std::string train_cache = cfg.cache + ".train", test_cache = cfg.cache + ".test";
    UciData uci;
    if (!cfg.cache.empty() && std::filesystem::exists(train_cache) && std::filesystem::exists(test_cache)) {
      uci.train = load_cache(train_cache);
      uci.test_pool = load_cache(test_cache);
    } else {
      uci = load_uci(cfg.dataset, cfg.channels);
      if (!cfg.cache.empty()) {
        save_cache(uci.train, train_cache);
        save_cache(uci.test_pool, test_cache);
      }
    }
    stats_rows = uci.train.size();
    universe = std::move(uci.train);
    universe.insert(universe.end(), uci.test_pool.begin(), uci.test_pool.end());
  }
  if (cfg.standardize) {
    const Dataset train_rows(universe.begin(), universe.begin() + static_cast<std::ptrdiff_t>(stats_rows));
    standardize(universe, channel_stats(train_rows));
  }
  return universe;
}

namespace detail {

inline ExperimentData experiment_data(const ExperimentConfig &cfg, const Dataset &universe,
                                      const std::vector<ClientDescriptor> &clients) {
  std::vector<TaskSequence> sequences;
  for (const ClientDescriptor &c : clients)
    sequences.push_back(c.tasks);
  return build_experiment_data(
      universe, sequences, {cfg.R, cfg.round_size, cfg.test_per_class, cfg.pretrain_per_class, cfg.master_seed});
}

inline CnnParams pretrain(const ExperimentConfig &cfg, const Dataset &pretrain_set, std::size_t channels) {
  CnnParams init = init_params(derive_seed(cfg.master_seed, SeedPurpose::init), channels);
  const LocalTraining pre{cfg.pretrain_epochs, cfg.B, cfg.pretrain_eta, cfg.dropout, {}};
  return train_local(std::move(init), pretrain_set, Strategy::ft, {}, false, pre,
                     {cfg.master_seed, SeedPurpose::pretrain_shuffle, SeedPurpose::pretrain_dropout, 0, 0});
}

} // namespace detail

// The shared initial model. It depends on the seed, the data sizes and the
// pre-training settings but not on the strategies, so runs that differ only
// in strategy or exemplar use can reuse it.
inline CnnParams pretrained_init(const ExperimentConfig &cfg, const Dataset &universe) {
  validate_config(cfg);
  const ExperimentData data = detail::experiment_data(cfg, universe, scenario_clients(cfg));
  return detail::pretrain(cfg, data.pretrain, dataset_channels(universe));
}

inline ExperimentResult run_experiment(const ExperimentConfig &cfg, const Dataset &universe,
                                       const CnnParams *pretrained = nullptr) {
  validate_config(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentResult res;
  res.config_echo = serialize_config(cfg);
  res.clients = scenario_clients(cfg);
  const ExperimentData data = detail::experiment_data(cfg, universe, res.clients);

  const CnnParams init =
      pretrained != nullptr ? *pretrained : detail::pretrain(cfg, data.pretrain, dataset_channels(universe));
  require_congruent(init, CnnParams(dataset_channels(universe)), "pretrained model");
  res.pretrain.round = 0;
  res.pretrain.entities.push_back(evaluate_entity(kServerName, init, data.test, nullptr, 0));

  ServerState server{init, 0};
  std::vector<ClientState> clients;
  for (std::size_t k = 0; k < res.clients.size(); ++k) {
    ClientState c;
    c.id = static_cast<int>(k) + 1;
    c.name = res.clients[k].name;
    c.current = init;
    c.prev = init;
    c.strategy = c.name == kClient1Name ? cfg.strategy_client1 : cfg.strategy_generalized;
    c.exemplars.per_task = cfg.m_ex;
    c.tasks = res.clients[k].tasks;
    c.weight_multiplier = c.name == kGeneralizedName ? cfg.K - 1 : 1;
    clients.push_back(std::move(c));
  }

  const RoundSettings settings{cfg.local_training(), cfg.use_exemplars, cfg.master_seed};
  for (int r = 1; r <= cfg.R; ++r) {
    std::vector<Dataset> round_data;
    for (std::size_t k = 0; k < clients.size(); ++k)
      round_data.push_back(data.per_round[k][static_cast<std::size_t>(r - 1)]);
    RoundOutcome o = run_round(std::move(server), std::move(clients), round_data, data.test, settings);
    server = std::move(o.server);
    clients = std::move(o.clients);
    res.records.push_back(std::move(o.record));
  }
  res.report = compute_report(res.records, res.clients, kServerName);
  res.final_global = std::move(server.global);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

inline ExperimentResult run_experiment(const ExperimentConfig &cfg) { return run_experiment(cfg, load_universe(cfg)); }

} // namespace fcl
