#pragma once

#include <cstdint>
#include <initializer_list>
#include <cmath>
#include <random>
#include <utility>

namespace fcl {

// Every random draw in an experiment comes from a generator seeded by
// derive_seed(master, purpose, indices...). Streams for different purposes
// or indices are statistically independent, so adding a draw in one place
// never shifts the numbers seen elsewhere.
enum class SeedPurpose : std::uint64_t {
  init = 1,
  pretrain_shuffle = 2,
  pretrain_dropout = 3,
  data_draw = 4,
  synthetic = 5,
  batch_shuffle = 6,
  dropout = 7,
  exemplar = 8,
  pca_sample = 9,
  centralized_split = 10,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, SeedPurpose purpose,
                                 std::initializer_list<std::uint64_t> indices = {}) {
  std::uint64_t h = splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(purpose)));
  for (std::uint64_t i : indices)
    h = splitmix64(h ^ splitmix64(i + 0x632be59bd9b4e019ULL));
  return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t master, SeedPurpose purpose,
                    std::initializer_list<std::uint64_t> indices = {}) {
  return Rng(derive_seed(master, purpose, indices));
}

// std::uniform_int_distribution is implementation-defined; this keeps
// shuffles identical across standard libraries.
inline std::uint64_t uniform_index(Rng &rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return v % n;
}

inline double uniform01(Rng &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <class RandomIt> void shuffle(RandomIt first, RandomIt last, Rng &rng) {
  const auto n = last - first;
  for (auto i = n - 1; i > 0; --i)
    std::swap(first[i], first[static_cast<decltype(i)>(uniform_index(rng, static_cast<std::uint64_t>(i) + 1))]);
}

// Box-Muller on uniform01 for the same portability reason.
inline double standard_normal(Rng &rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0)
    u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

} // namespace fcl
