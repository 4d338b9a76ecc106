#pragma once

// Mini-batch SGD over a dataset with one of the client strategies, plus the
// centralized baseline trainer.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fcl/dataset.hpp"
#include "fcl/losses.hpp"
#include "fcl/metrics.hpp"
#include "fcl/nn.hpp"
#include "fcl/seed.hpp"

namespace fcl {

enum class Strategy { ft, flwf, flwf2t };

inline std::string to_string(Strategy s) {
  switch (s) {
  case Strategy::ft:
    return "FT";
  case Strategy::flwf:
    return "FLwF";
  case Strategy::flwf2t:
    return "FLwF2T";
  }
  return "?";
}

inline std::optional<Strategy> parse_strategy(const std::string &s) {
  if (s == "FT")
    return Strategy::ft;
  if (s == "FLwF")
    return Strategy::flwf;
  if (s == "FLwF2T" || s == "FLwF-2T")
    return Strategy::flwf2t;
  return std::nullopt;
}

struct LocalTraining {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double eta = 0.01;
  double dropout = kDefaultDropout;
  DistillConfig distill;
};

// Where a training run draws its shuffles and dropout masks from:
// shuffle stream (master, shuffle, {a, b, epoch}), dropout seed
// (master, dropout, {a, b, epoch, batch}).
struct TrainStreams {
  std::uint64_t master = 0;
  SeedPurpose shuffle = SeedPurpose::batch_shuffle;
  SeedPurpose dropout = SeedPurpose::dropout;
  std::uint64_t a = 0;
  std::uint64_t b = 0;
};

// Teacher logits [n, 6] for every example of the training set, computed once
// in eval mode; teachers do not change during local training.
struct Teachers {
  std::optional<Tensor> prev_client;
  std::optional<Tensor> server;
};

inline Tensor logits_for(const CnnParams &params, const Dataset &data) {
  Tensor out({data.size(), kClasses});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kEvalBatch) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + kEvalBatch); ++i)
      idx.push_back(i);
    const Tensor l = forward(params, stack_signals(data, idx), Mode::eval);
    std::copy(l.values().begin(), l.values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(start * kClasses));
  }
  return out;
}

namespace detail {

inline Tensor gather_rows(const Tensor &t, std::span<const std::size_t> idx) {
  Tensor out({idx.size(), t.extent(1)});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < t.extent(1); ++j)
      out.at(i, j) = t.at(idx[i], j);
  return out;
}

} // namespace detail

// The strategy's objective on one batch.
inline LossValue strategy_loss(Strategy s, const Tensor &student, const Tensor &labels, const Tensor *prev_client,
                               const Tensor *server, const DistillConfig &cfg, bool first_round) {
  switch (s) {
  case Strategy::ft:
    return classification_loss(student, labels);
  case Strategy::flwf:
    return flwf_loss(student, *prev_client, labels, cfg);
  case Strategy::flwf2t:
    return flwf2t_loss(student, first_round ? *server : *prev_client, *server, labels, cfg, first_round);
  }
  throw InvalidParameter("unknown strategy");
}

// E epochs of mini-batch SGD starting from `params`. Batches are a fresh
// shuffle of the data each epoch; the last batch may be short.
inline CnnParams train_local(CnnParams params, const Dataset &data, Strategy strategy, const Teachers &teachers,
                             bool first_round, const LocalTraining &cfg, const TrainStreams &streams) {
  if (data.empty())
    throw ConfigError("local training on an empty dataset");
  if (cfg.batch_size == 0)
    throw ConfigError("batch size must be >= 1");
  if (strategy == Strategy::flwf && !teachers.prev_client)
    throw ConfigError("FLwF needs the previous client model as teacher");
  if (strategy == Strategy::flwf2t && (!teachers.server || (!first_round && !teachers.prev_client)))
    throw ConfigError("FLwF2T needs the server model (and after round 1 the previous client model)");

  std::vector<std::size_t> order = all_indices(data);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = make_rng(streams.master, streams.shuffle, {streams.a, streams.b, epoch});
    shuffle(order.begin(), order.end(), rng);
    std::size_t batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::span<const std::size_t> sel(order.data() + start, std::min(cfg.batch_size, order.size() - start));
      const std::uint64_t dropout_seed =
          derive_seed(streams.master, streams.dropout, {streams.a, streams.b, epoch, batch_no});
      const ForwardTrace tr = forward_trace(params, stack_signals(data, sel), Mode::train, dropout_seed, cfg.dropout);
      std::optional<Tensor> prev_b, server_b;
      if (teachers.prev_client)
        prev_b = detail::gather_rows(*teachers.prev_client, sel);
      if (teachers.server)
        server_b = detail::gather_rows(*teachers.server, sel);
      const LossValue loss = strategy_loss(strategy, tr.logits, one_hot_labels(data, sel), prev_b ? &*prev_b : nullptr,
                                           server_b ? &*server_b : nullptr, cfg.distill, first_round);
      backward_sgd(params, tr, loss.grad_on_logits, cfg.eta);
    }
  }
  return params;
}

// ClientUpdate: start from the global model, train E epochs with the
// client's strategy. Teachers are the client's previous model and the
// global model. Only this client's own data and models are visible.
inline CnnParams client_update(int client_id, int round, const CnnParams &global, const CnnParams &prev,
                               const Dataset &data, Strategy strategy, const LocalTraining &cfg,
                               std::uint64_t master_seed) {
  if (data.empty())
    throw ConfigError("client " + std::to_string(client_id) + " has no data in round " + std::to_string(round));
  if (cfg.epochs == 0)
    return global;
  Teachers teachers;
  const bool first_round = round == 1;
  if (strategy == Strategy::flwf || (strategy == Strategy::flwf2t && !first_round))
    teachers.prev_client = logits_for(prev, data);
  if (strategy == Strategy::flwf2t)
    teachers.server = logits_for(global, data);
  const TrainStreams streams{master_seed, SeedPurpose::batch_shuffle, SeedPurpose::dropout,
                             static_cast<std::uint64_t>(client_id), static_cast<std::uint64_t>(round)};
  return train_local(global, data, strategy, teachers, first_round, cfg, streams);
}

// --- centralized baseline ---------------------------------------------------

struct CentralizedConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double eta = 0.01;
  double dropout = kDefaultDropout;
  double train_fraction = 0.70;
  double validation_fraction = 0.15;
  std::uint64_t seed = 1;
};

struct CentralizedResult {
  double test_accuracy = 0.0;
  double best_validation_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::size_t train_size = 0, validation_size = 0, test_size = 0;
};

// Stratified train/validation/test split, plain FT training, test accuracy
// of the epoch with the best validation accuracy.
inline CentralizedResult train_centralized(const Dataset &data, const CentralizedConfig &cfg) {
  std::array<std::vector<std::size_t>, kClasses> by_class;
  for (std::size_t i = 0; i < data.size(); ++i)
    by_class.at(static_cast<std::size_t>(data[i].label)).push_back(i);
  Dataset train, val, test;
  for (std::size_t c = 0; c < kClasses; ++c) {
    auto &ids = by_class[c];
    Rng rng = make_rng(cfg.seed, SeedPurpose::centralized_split, {c});
    shuffle(ids.begin(), ids.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(ids.size())));
    const auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(ids.size())));
    for (std::size_t i = 0; i < ids.size(); ++i)
      (i < n_train ? train : i < n_train + n_val ? val : test).push_back(data[ids[i]]);
  }
  if (train.empty() || val.empty() || test.empty())
    throw ConfigError("centralized split left an empty partition");

  CentralizedResult res;
  res.train_size = train.size();
  res.validation_size = val.size();
  res.test_size = test.size();
  CnnParams params = init_params(derive_seed(cfg.seed, SeedPurpose::init), dataset_channels(data));
  const LocalTraining one_epoch{1, cfg.batch_size, cfg.eta, cfg.dropout, {}};
  double best_val = -1.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const TrainStreams streams{cfg.seed, SeedPurpose::pretrain_shuffle, SeedPurpose::pretrain_dropout, 1000, epoch};
    params = train_local(std::move(params), train, Strategy::ft, {}, false, one_epoch, streams);
    const double v = overall_accuracy(val, predict(params, val));
    if (v > best_val) {
      best_val = v;
      res.best_epoch = epoch + 1;
      res.best_validation_accuracy = v;
      res.test_accuracy = overall_accuracy(test, predict(params, test));
    }
  }
  return res;
}

} // namespace fcl
