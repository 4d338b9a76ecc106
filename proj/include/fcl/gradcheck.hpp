#pragma once

// Central finite differences of a composed network loss against backprop.
//
// Coordinates are sampled per parameter group. A coordinate whose +/- eps
// perturbation flips a ReLU sign or a max-pool winner straddles a
// non-differentiable point; such a coordinate is redrawn (and counted), as
// the difference quotient there measures a one-sided slope mix.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fcl/losses.hpp"
#include "fcl/nn.hpp"
#include "fcl/seed.hpp"

namespace fcl {

enum class GradcheckLoss { classification, flwf, flwf2t };

inline std::string to_string(GradcheckLoss l) {
  switch (l) {
  case GradcheckLoss::classification:
    return "classification";
  case GradcheckLoss::flwf:
    return "flwf";
  case GradcheckLoss::flwf2t:
    return "flwf2t";
  }
  return "?";
}

struct GradcheckOptions {
  std::uint64_t seed = 7;
  std::size_t batch = 2;
  double epsilon = 1e-3;
  std::size_t samples_per_group = 16;
  Mode mode = Mode::eval;
  DistillConfig distill{2.0, 0.001, 0.7};
};

struct GroupCheck {
  std::string group;
  std::size_t checked = 0;
  std::size_t redrawn = 0;
  double max_relative_error = 0.0;
};

struct GradcheckReport {
  GradcheckLoss loss = GradcheckLoss::classification;
  std::vector<GroupCheck> groups;

  double max_relative_error() const {
    double m = 0.0;
    for (const GroupCheck &g : groups)
      m = std::max(m, g.max_relative_error);
    return m;
  }
};

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

namespace detail {

// Sign pattern of every ReLU and the argmax of every pool window.
inline std::vector<std::uint8_t> activation_pattern(const ForwardTrace &tr) {
  std::vector<std::uint8_t> p;
  p.reserve(tr.pool_at.size() * 2 + tr.hidden_pre.size());
  for (std::size_t i = 0; i < tr.pool_at.size(); ++i) {
    p.push_back(tr.pool_at[i]);
    p.push_back(tr.pooled[i] > 0.0);
  }
  for (double h : tr.hidden_pre.values())
    p.push_back(h > 0.0);
  return p;
}

} // namespace detail

inline GradcheckReport run_gradcheck(GradcheckLoss which, const GradcheckOptions &opt = {}) {
  const CnnParams base = init_params(opt.seed);
  Rng rng = make_rng(opt.seed, SeedPurpose::data_draw, {static_cast<std::uint64_t>(which)});
  Tensor x({opt.batch, kSignalLength, kDefaultChannels});
  for (double &v : x.values())
    v = standard_normal(rng);
  Tensor labels({opt.batch, kClasses});
  Tensor prev({opt.batch, kClasses}), server({opt.batch, kClasses});
  for (std::size_t b = 0; b < opt.batch; ++b)
    labels.at(b, uniform_index(rng, kClasses)) = 1.0;
  for (double &v : prev.values())
    v = 2.0 * standard_normal(rng);
  for (double &v : server.values())
    v = 2.0 * standard_normal(rng);
  const std::uint64_t dropout_seed = rng();

  auto loss_of = [&](const Tensor &logits) {
    switch (which) {
    case GradcheckLoss::classification:
      return classification_loss(logits, labels);
    case GradcheckLoss::flwf:
      return flwf_loss(logits, prev, labels, opt.distill);
    case GradcheckLoss::flwf2t:
      return flwf2t_loss(logits, prev, server, labels, opt.distill);
    }
    throw InvalidParameter("unknown loss");
  };

  const ForwardTrace tr = forward_trace(base, x, opt.mode, dropout_seed);
  const GradientSet grad = backward(base, tr, loss_of(tr.logits).grad_on_logits);

  const auto pattern = detail::activation_pattern(tr);
  GradcheckReport rep;
  rep.loss = which;
  CnnParams probe = base;
  auto probe_groups = probe.groups();
  const auto grad_groups = grad.groups();
  for (std::size_t g = 0; g < probe_groups.size(); ++g) {
    GroupCheck gc;
    gc.group = std::string(NetworkTensors::group_names[g]);
    Tensor &t = *probe_groups[g];
    const std::size_t want = std::min(opt.samples_per_group, t.size());
    std::size_t attempts = 0;
    while (gc.checked < want && attempts < 50 * want) {
      ++attempts;
      const std::size_t i = t.size() <= opt.samples_per_group ? gc.checked : uniform_index(rng, t.size());
      const double orig = t[i];
      t[i] = orig + opt.epsilon;
      const ForwardTrace up = forward_trace(probe, x, opt.mode, dropout_seed);
      t[i] = orig - opt.epsilon;
      const ForwardTrace down = forward_trace(probe, x, opt.mode, dropout_seed);
      t[i] = orig;
      if (detail::activation_pattern(up) != pattern || detail::activation_pattern(down) != pattern) {
        ++gc.redrawn;
        if (t.size() > opt.samples_per_group)
          continue;
      }
      const double numeric = (loss_of(up.logits).value - loss_of(down.logits).value) / (2.0 * opt.epsilon);
      gc.max_relative_error = std::max(gc.max_relative_error, relative_error((*grad_groups[g])[i], numeric));
      ++gc.checked;
    }
    rep.groups.push_back(gc);
  }
  return rep;
}

} // namespace fcl
