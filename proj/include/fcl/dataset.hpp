#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fcl/nn.hpp"
#include "fcl/tensor.hpp"

namespace fcl {

struct Example {
  Tensor signal;                  // [128, C]
  int label = 0;                  // 0 Walking .. 5 Laying
  std::uint64_t source_index = 0; // unique within one experiment's universe
};

using Dataset = std::vector<Example>;

inline std::size_t dataset_channels(const Dataset &d) {
  return d.empty() ? kDefaultChannels : d.front().signal.extent(1);
}

inline std::vector<std::size_t> class_counts(const Dataset &d) {
  std::vector<std::size_t> counts(kClasses, 0);
  for (const Example &e : d)
    counts.at(static_cast<std::size_t>(e.label))++;
  return counts;
}

// Stacks the selected examples into an input batch [n, 128, C].
inline Tensor stack_signals(const Dataset &d, std::span<const std::size_t> indices) {
  if (indices.empty())
    throw InvalidInput("stack_signals: empty selection");
  const std::size_t channels = dataset_channels(d);
  const std::size_t width = kSignalLength * channels;
  Tensor x({indices.size(), kSignalLength, channels});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor &s = d.at(indices[i]).signal;
    require_shape(s, {kSignalLength, channels}, "stack_signals");
    std::copy(s.values().begin(), s.values().end(), x.values().begin() + static_cast<std::ptrdiff_t>(i * width));
  }
  return x;
}

inline Tensor one_hot_labels(const Dataset &d, std::span<const std::size_t> indices) {
  Tensor y({indices.size(), kClasses});
  for (std::size_t i = 0; i < indices.size(); ++i)
    y.at(i, static_cast<std::size_t>(d.at(indices[i]).label)) = 1.0;
  return y;
}

inline std::vector<std::size_t> all_indices(const Dataset &d) {
  std::vector<std::size_t> idx(d.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    idx[i] = i;
  return idx;
}

} // namespace fcl
