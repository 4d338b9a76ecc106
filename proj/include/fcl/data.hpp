#pragma once

// Dataset sources (UCI HAR raw inertial signals, synthetic stand-in),
// standardization, the binary cache and experiment data construction.

#include <algorithm>
#include <array>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fcl/continual.hpp"
#include "fcl/dataset.hpp"
#include "fcl/seed.hpp"

namespace fcl {

inline const std::array<std::string, 9> &uci_channel_names() {
  static const std::array<std::string, 9> names{
      "body_acc_x",  "body_acc_y",  "body_acc_z",  "total_acc_x", "total_acc_y",
      "total_acc_z", "body_gyro_x", "body_gyro_y", "body_gyro_z"};
  return names;
}

inline std::vector<std::string> default_channels() {
  return {"total_acc_x", "total_acc_y", "total_acc_z", "body_gyro_x", "body_gyro_y", "body_gyro_z"};
}

struct UciData {
  Dataset train;
  Dataset test_pool;
};

namespace detail {

inline std::vector<std::vector<double>> read_matrix(const std::filesystem::path &file, std::size_t columns) {
  std::ifstream in(file);
  if (!in)
    throw IngestionError("cannot open " + file.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos)
      continue;
    std::vector<double> row;
    row.reserve(columns);
    const char *p = line.c_str();
    while (true) {
      while (*p == ' ' || *p == '\t' || *p == '\r')
        ++p;
      if (*p == '\0')
        break;
      char *end = nullptr;
      errno = 0;
      const double v = std::strtod(p, &end);
      if (end == p || errno == ERANGE || !std::isfinite(v))
        throw IngestionError(file.string() + ":" + std::to_string(line_no) + ": bad number near '" +
                             std::string(p, std::min<std::size_t>(16, std::strlen(p))) + "'");
      row.push_back(v);
      p = end;
    }
    if (row.size() != columns)
      throw IngestionError(file.string() + ":" + std::to_string(line_no) + ": expected " +
                           std::to_string(columns) + " values, found " + std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::filesystem::path uci_root(const std::filesystem::path &root) {
  namespace fs = std::filesystem;
  if (fs::exists(root / "train" / "y_train.txt"))
    return root;
  if (fs::exists(root / "UCI HAR Dataset" / "train" / "y_train.txt"))
    return root / "UCI HAR Dataset";
  throw IngestionError("no UCI HAR layout under " + root.string() + " (missing train/y_train.txt)");
}

inline Dataset load_uci_split(const std::filesystem::path &root, const std::string &split,
                              const std::vector<std::string> &channels, std::uint64_t first_index) {
  const auto label_file = root / split / ("y_" + split + ".txt");
  const auto labels = read_matrix(label_file, 1);
  Dataset out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = labels[i][0];
    if (y != std::floor(y) || y < 1 || y > 6)
      throw IngestionError(label_file.string() + ":" + std::to_string(i + 1) + ": label must be 1..6");
    out[i].label = static_cast<int>(y) - 1;
    out[i].source_index = first_index + i;
    out[i].signal = Tensor({kSignalLength, channels.size()});
  }
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto file = root / split / "Inertial Signals" / (channels[c] + "_" + split + ".txt");
    const auto rows = read_matrix(file, kSignalLength);
    if (rows.size() != labels.size())
      throw IngestionError(file.string() + ": " + std::to_string(rows.size()) + " rows but " +
                           std::to_string(labels.size()) + " labels in " + label_file.string());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t t = 0; t < kSignalLength; ++t)
        out[i].signal.at(t, c) = rows[i][t];
  }
  return out;
}

} // namespace detail

// Reads the public archive layout: <root>/{train,test}/Inertial Signals/<channel>_<split>.txt
// plus <root>/{train,test}/y_<split>.txt. Labels 1..6 become 0..5. Test
// rows get source indices after all train rows.
inline UciData load_uci(const std::filesystem::path &root_path,
                        const std::vector<std::string> &channels = default_channels()) {
  if (channels.empty())
    throw ConfigError("channel selection is empty");
  for (const std::string &c : channels)
    if (std::find(uci_channel_names().begin(), uci_channel_names().end(), c) == uci_channel_names().end())
      throw ConfigError("unknown UCI channel '" + c + "'");
  const auto root = detail::uci_root(root_path);
  UciData d;
  d.train = detail::load_uci_split(root, "train", channels, 0);
  d.test_pool = detail::load_uci_split(root, "test", channels, d.train.size());
  return d;
}

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline ChannelStats channel_stats(const Dataset &d) {
  if (d.empty())
    throw InvalidInput("channel_stats: empty dataset");
  const std::size_t channels = dataset_channels(d);
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  for (const Example &e : d)
    for (std::size_t t = 0; t < kSignalLength; ++t)
      for (std::size_t c = 0; c < channels; ++c)
        sum[c] += e.signal.at(t, c);
  const double n = static_cast<double>(d.size() * kSignalLength);
  ChannelStats s{std::vector<double>(channels), std::vector<double>(channels)};
  for (std::size_t c = 0; c < channels; ++c)
    s.mean[c] = sum[c] / n;
  for (const Example &e : d)
    for (std::size_t t = 0; t < kSignalLength; ++t)
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = e.signal.at(t, c) - s.mean[c];
        sq[c] += v * v;
      }
  for (std::size_t c = 0; c < channels; ++c) {
    s.stddev[c] = std::sqrt(sq[c] / n);
    if (s.stddev[c] <= 0.0)
      s.stddev[c] = 1.0;
  }
  return s;
}

inline void standardize(Dataset &d, const ChannelStats &s) {
  for (Example &e : d)
    for (std::size_t t = 0; t < kSignalLength; ++t)
      for (std::size_t c = 0; c < s.mean.size(); ++c)
        e.signal.at(t, c) = (e.signal.at(t, c) - s.mean[c]) / s.stddev[c];
}

inline constexpr double kSyntheticGravity = 8.0;

// Six Gaussian class templates over [128, 6] plus unit-variance white noise.
// Walking classes 0-2 share a periodic base and differ by small offsets;
// Sitting (3) and Standing (4) sit symmetrically around one static base,
// closer together than any other pair; Laying (5) is far from everything,
// its gravity offset sitting on a different axis from the upright classes.
inline Dataset make_synthetic(std::uint64_t seed, std::size_t per_class,
                              std::size_t channels = kDefaultChannels) {
  if (per_class < 1)
    throw ConfigError("make_synthetic: per_class must be >= 1");
  Rng rng = make_rng(seed, SeedPurpose::synthetic);
  const std::size_t width = kSignalLength * channels;

  auto smooth = [&](double norm, bool periodic) {
    std::vector<double> v(width, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
      const double offset = periodic ? 0.0 : standard_normal(rng);
      for (int j = 0; j < 3; ++j) {
        const double freq = periodic ? 2.0 + 6.0 * uniform01(rng) : 0.5 + 1.5 * uniform01(rng);
        const double phase = 6.283185307179586 * uniform01(rng);
        const double amp = standard_normal(rng);
        for (std::size_t t = 0; t < kSignalLength; ++t)
          v[t * channels + c] +=
              amp * std::sin(6.283185307179586 * freq * static_cast<double>(t) / kSignalLength + phase);
      }
      for (std::size_t t = 0; t < kSignalLength; ++t)
        v[t * channels + c] += offset;
    }
    double n2 = 0.0;
    for (double x : v)
      n2 += x * x;
    const double scale = norm / std::sqrt(n2);
    for (double &x : v)
      x *= scale;
    return v;
  };
  auto plus = [](std::vector<double> a, const std::vector<double> &b, double w) {
    for (std::size_t i = 0; i < a.size(); ++i)
      a[i] += w * b[i];
    return a;
  };

  // Constant gravity offset: upright classes on channel 0, lying on the last
  // accelerometer channel.
  auto gravity = [&](std::size_t channel, double g) {
    std::vector<double> v(width, 0.0);
    for (std::size_t t = 0; t < kSignalLength; ++t)
      v[t * channels + std::min(channel, channels - 1)] = g;
    return v;
  };
  const auto upright = gravity(0, kSyntheticGravity);
  const auto walk = plus(upright, smooth(12.0, true), 1.0);
  const auto still = plus(upright, smooth(12.0, false), 1.0);
  std::array<std::vector<double>, kClasses> templates{
      plus(walk, smooth(3.0, true), 1.0),
      plus(walk, smooth(3.0, true), 1.0),
      plus(walk, smooth(3.0, true), 1.0),
      {},
      {},
      plus(gravity(2, kSyntheticGravity), smooth(12.0, false), 1.0),
  };
  const auto sit_stand = smooth(1.0, false);
  templates[3] = plus(still, sit_stand, 1.0);
  templates[4] = plus(still, sit_stand, -1.0);

  Dataset out;
  out.reserve(per_class * kClasses);
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t c = 0; c < kClasses; ++c) {
      Example e;
      e.label = static_cast<int>(c);
      e.source_index = out.size();
      e.signal = Tensor({kSignalLength, channels});
      for (std::size_t k = 0; k < width; ++k)
        e.signal[k] = templates[c][k] + standard_normal(rng);
      out.push_back(std::move(e));
    }
  return out;
}

// Binary cache, little-endian:
//   bytes 0..7   magic "FCLDATA\0"
//   byte  8      version (1)
//   bytes 9..16  u64 example count N
//   bytes 17..20 u32 signal length L
//   bytes 21..24 u32 channel count C
//   N x (i32 label, u64 source_index)
//   N x L x C f64 signal values, example-major then time then channel
inline constexpr std::array<char, 8> kCacheMagic{'F', 'C', 'L', 'D', 'A', 'T', 'A', '\0'};
inline constexpr std::uint8_t kCacheVersion = 1;

namespace detail {

template <class T> void put(std::ostream &os, T v) {
  static_assert(std::endian::native == std::endian::little, "cache format assumes a little-endian host");
  os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <class T> T get(std::istream &is, const std::string &file) {
  T v{};
  if (!is.read(reinterpret_cast<char *>(&v), sizeof(T)))
    throw IngestionError(file + ": truncated cache");
  return v;
}

} // namespace detail

inline void save_cache(const Dataset &d, const std::filesystem::path &file) {
  std::ofstream os(file, std::ios::binary);
  if (!os)
    throw IngestionError("cannot write " + file.string());
  const std::size_t channels = dataset_channels(d);
  os.write(kCacheMagic.data(), kCacheMagic.size());
  detail::put<std::uint8_t>(os, kCacheVersion);
  detail::put<std::uint64_t>(os, d.size());
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(kSignalLength));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(channels));
  for (const Example &e : d) {
    detail::put<std::int32_t>(os, e.label);
    detail::put<std::uint64_t>(os, e.source_index);
  }
  for (const Example &e : d)
    os.write(reinterpret_cast<const char *>(e.signal.data().data()),
             static_cast<std::streamsize>(e.signal.size() * sizeof(double)));
  if (!os)
    throw IngestionError("write failed: " + file.string());
}

inline Dataset load_cache(const std::filesystem::path &file) {
  std::ifstream is(file, std::ios::binary);
  if (!is)
    throw IngestionError("cannot open " + file.string());
  const std::string name = file.string();
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCacheMagic)
    throw IngestionError(name + ": not a dataset cache (bad magic)");
  if (detail::get<std::uint8_t>(is, name) != kCacheVersion)
    throw IngestionError(name + ": unsupported cache version");
  const auto n = detail::get<std::uint64_t>(is, name);
  const auto length = detail::get<std::uint32_t>(is, name);
  const auto channels = detail::get<std::uint32_t>(is, name);
  if (length != kSignalLength || channels == 0)
    throw IngestionError(name + ": unexpected signal shape");
  Dataset d(n);
  for (Example &e : d) {
    e.label = detail::get<std::int32_t>(is, name);
    e.source_index = detail::get<std::uint64_t>(is, name);
    if (e.label < 0 || e.label >= static_cast<int>(kClasses))
      throw IngestionError(name + ": label out of range");
  }
  for (Example &e : d) {
    e.signal = Tensor({kSignalLength, channels});
    if (!is.read(reinterpret_cast<char *>(e.signal.data().data()),
                 static_cast<std::streamsize>(e.signal.size() * sizeof(double))))
      throw IngestionError(name + ": truncated cache");
  }
  return d;
}

struct ExperimentDataConfig {
  int rounds = 8;
  std::size_t round_size = 120;
  std::size_t test_per_class = 100;
  std::size_t pretrain_per_class = 10;
  std::uint64_t seed = 1;
};

struct ExperimentData {
  Dataset pretrain;
  Dataset test;
  std::vector<std::vector<Dataset>> per_round; // [client][round - 1]
};

namespace detail {

// Splits n examples over the task's classes as evenly as possible; the
// lowest-numbered classes take the remainder.
inline std::vector<std::pair<int, std::size_t>> class_quota(const std::set<int> &classes, std::size_t n) {
  std::vector<std::pair<int, std::size_t>> q;
  std::size_t i = 0;
  for (int c : classes) {
    q.emplace_back(c, n / classes.size() + (i < n % classes.size() ? 1 : 0));
    ++i;
  }
  return q;
}

} // namespace detail

// Draws the balanced test set, the balanced pre-training set and every
// client's per-round set from one pool without replacement.
inline ExperimentData build_experiment_data(const Dataset &universe, const std::vector<TaskSequence> &clients,
                                            const ExperimentDataConfig &cfg) {
  if (cfg.round_size == 0)
    throw ConfigError("round_size must be >= 1");
  std::array<std::vector<std::size_t>, kClasses> pool;
  for (std::size_t i = 0; i < universe.size(); ++i)
    pool.at(static_cast<std::size_t>(universe[i].label)).push_back(i);

  std::array<std::size_t, kClasses> demand{};
  for (std::size_t c = 0; c < kClasses; ++c)
    demand[c] = cfg.test_per_class + cfg.pretrain_per_class;
  for (const TaskSequence &seq : clients) {
    if (seq.total_rounds() != cfg.rounds)
      throw ConfigError("task budgets sum to " + std::to_string(seq.total_rounds()) + ", expected R = " +
                        std::to_string(cfg.rounds));
    for (int r = 1; r <= cfg.rounds; ++r)
      for (auto [c, n] : detail::class_quota(current_task(seq, r).classes, cfg.round_size))
        demand[static_cast<std::size_t>(c)] += n;
  }
  std::string deficit;
  for (std::size_t c = 0; c < kClasses; ++c)
    if (demand[c] > pool[c].size())
      deficit += " class " + std::to_string(c) + ": need " + std::to_string(demand[c]) + ", have " +
                 std::to_string(pool[c].size()) + ";";
  if (!deficit.empty())
    throw ConfigError("not enough data for disjoint draws:" + deficit);

  for (std::size_t c = 0; c < kClasses; ++c) {
    Rng rng = make_rng(cfg.seed, SeedPurpose::data_draw, {c});
    shuffle(pool[c].begin(), pool[c].end(), rng);
  }
  std::array<std::size_t, kClasses> next{};
  auto take = [&](int c, std::size_t n, Dataset &into) {
    auto &p = pool[static_cast<std::size_t>(c)];
    auto &k = next[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < n; ++i)
      into.push_back(universe[p[k++]]);
  };

  ExperimentData out;
  for (int c = 0; c < static_cast<int>(kClasses); ++c)
    take(c, cfg.test_per_class, out.test);
  for (int c = 0; c < static_cast<int>(kClasses); ++c)
    take(c, cfg.pretrain_per_class, out.pretrain);
  out.per_round.assign(clients.size(), std::vector<Dataset>(static_cast<std::size_t>(cfg.rounds)));
  for (int r = 1; r <= cfg.rounds; ++r)
    for (std::size_t k = 0; k < clients.size(); ++k) {
      Dataset &d = out.per_round[k][static_cast<std::size_t>(r - 1)];
      for (auto [c, n] : detail::class_quota(current_task(clients[k], r).classes, cfg.round_size))
        take(c, n, d);
    }
  return out;
}

} // namespace fcl
