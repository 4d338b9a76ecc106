#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "fcl/dataset.hpp"
#include "fcl/nn.hpp"
#include "fcl/seed.hpp"
#include "fcl/tensor.hpp"

namespace fcl::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(splitmix64(seed));
  for (double &v : t.values())
    v = scale * standard_normal(rng);
  return t;
}

inline Tensor one_hot(const std::vector<int> &labels) {
  Tensor t({labels.size(), kClasses});
  for (std::size_t i = 0; i < labels.size(); ++i)
    t.at(i, static_cast<std::size_t>(labels[i])) = 1.0;
  return t;
}

// Every parameter drawn uniformly from [-1, 1).
inline CnnParams random_params(std::uint64_t seed, std::size_t channels = kDefaultChannels) {
  CnnParams p(channels);
  Rng rng(splitmix64(seed));
  for (Tensor *t : p.groups())
    for (double &v : t->values())
      v = 2.0 * uniform01(rng) - 1.0;
  return p;
}

// A network whose logits are the constant out_b: every weight zero.
inline CnnParams constant_predictor(int cls, std::size_t channels = kDefaultChannels) {
  CnnParams p(channels);
  p.out_b[static_cast<std::size_t>(cls)] = 1.0;
  return p;
}

// n examples per class with N(0,1) signals; labels cycle 0..5.
inline Dataset noise_dataset(std::size_t per_class, std::uint64_t seed, std::size_t channels = kDefaultChannels) {
  Dataset d;
  Rng rng(splitmix64(seed));
  for (std::size_t i = 0; i < per_class * kClasses; ++i) {
    Example e;
    e.label = static_cast<int>(i % kClasses);
    e.source_index = i;
    e.signal = Tensor({kSignalLength, channels});
    for (double &v : e.signal.values())
      v = standard_normal(rng);
    d.push_back(std::move(e));
  }
  return d;
}

inline std::filesystem::path scratch_dir(const std::string &name) {
  const auto dir = std::filesystem::temp_directory_path() / ("fcl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline double max_abs_diff(const Tensor &a, const Tensor &b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const NetworkTensors &a, const NetworkTensors &b) {
  double m = 0.0;
  const auto ga = a.groups();
  const auto gb = b.groups();
  for (std::size_t g = 0; g < ga.size(); ++g)
    m = std::max(m, max_abs_diff(*ga[g], *gb[g]));
  return m;
}

} // namespace fcl::test
