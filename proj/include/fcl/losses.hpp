#pragma once

// Training objectives on student logits. Every loss is the mean over the
// batch of a per-example term, so the learning rate does not depend on the
// batch size; the summed form is batch * value. Gradients are with respect
// to the student logits only; teacher logits are constants.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "fcl/tensor.hpp"

namespace fcl {

struct LossValue {
  double value = 0.0;
  Tensor grad_on_logits;
};

struct DistillConfig {
  double temperature = 2.0;
  double alpha = 0.001;
  double beta = 0.7;
};

namespace detail {

inline void check_logits(const Tensor &t, const char *what) {
  if (t.rank() != 2)
    throw InvalidInput(std::string(what) + ": logits must be [batch, classes], got " +
                       shape_string(t.shape()));
}

inline void check_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw InvalidParameter("temperature must be a finite value > 0, got " +
                           std::to_string(temperature));
}

inline void check_weight(double w, const char *name) {
  if (!(w >= 0.0 && w <= 1.0))
    throw InvalidParameter(std::string(name) + " must lie in [0, 1], got " + std::to_string(w));
}

// log softmax(row / T) via max subtraction.
inline void log_softmax_row(const double *row, std::size_t n, double temperature, double *out) {
  double m = row[0];
  for (std::size_t i = 1; i < n; ++i)
    m = std::max(m, row[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = (row[i] - m) / temperature;
    s += std::exp(out[i]);
  }
  const double log_s = std::log(s);
  for (std::size_t i = 0; i < n; ++i)
    out[i] -= log_s;
}

inline LossValue scaled(LossValue l, double w) {
  l.value *= w;
  for (double &g : l.grad_on_logits.values())
    g *= w;
  return l;
}

inline void accumulate(LossValue &into, const LossValue &term) {
  into.value += term.value;
  for (std::size_t i = 0; i < into.grad_on_logits.size(); ++i)
    into.grad_on_logits[i] += term.grad_on_logits[i];
}

} // namespace detail

inline Tensor temperature_softmax(const Tensor &logits, double temperature) {
  detail::check_logits(logits, "temperature_softmax");
  detail::check_temperature(temperature);
  Tensor out(logits.shape());
  const std::size_t n = logits.extent(1);
  for (std::size_t b = 0; b < logits.extent(0); ++b) {
    double *row = out.data().data() + b * n;
    detail::log_softmax_row(logits.data().data() + b * n, n, temperature, row);
    for (std::size_t i = 0; i < n; ++i)
      row[i] = std::exp(row[i]);
  }
  return out;
}

inline Tensor softmax(const Tensor &logits) { return temperature_softmax(logits, 1.0); }

// Mean softmax cross-entropy against one-hot labels, unscaled logits.
inline LossValue classification_loss(const Tensor &student, const Tensor &labels) {
  detail::check_logits(student, "classification_loss");
  require_shape(labels, student.shape(), "classification_loss: labels");
  const std::size_t batch = student.extent(0);
  const std::size_t n = student.extent(1);
  LossValue out{0.0, Tensor(student.shape())};
  std::vector<double> log_p(n);
  for (std::size_t b = 0; b < batch; ++b) {
    const double *y = labels.data().data() + b * n;
    std::size_t ones = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (y[i] == 1.0)
        ++ones;
      else if (y[i] != 0.0)
        ones = n + 1;
    }
    if (ones != 1)
      throw InvalidInput("classification_loss: label row " + std::to_string(b) + " is not one-hot");
    detail::log_softmax_row(student.data().data() + b * n, n, 1.0, log_p.data());
    double *g = out.grad_on_logits.data().data() + b * n;
    for (std::size_t i = 0; i < n; ++i) {
      out.value -= y[i] * log_p[i];
      g[i] = (std::exp(log_p[i]) - y[i]) / static_cast<double>(batch);
    }
  }
  out.value /= static_cast<double>(batch);
  return out;
}

// Mean over the batch of -sum_i pi_teacher_i log pi_student_i, both sides
// softened by T. No T^2 factor.
inline LossValue distillation_loss(const Tensor &student, const Tensor &teacher, double temperature) {
  detail::check_logits(student, "distillation_loss");
  require_shape(teacher, student.shape(), "distillation_loss: teacher");
  detail::check_temperature(temperature);
  const std::size_t batch = student.extent(0);
  const std::size_t n = student.extent(1);
  LossValue out{0.0, Tensor(student.shape())};
  std::vector<double> log_s(n), log_t(n);
  for (std::size_t b = 0; b < batch; ++b) {
    detail::log_softmax_row(student.data().data() + b * n, n, temperature, log_s.data());
    detail::log_softmax_row(teacher.data().data() + b * n, n, temperature, log_t.data());
    double *g = out.grad_on_logits.data().data() + b * n;
    for (std::size_t i = 0; i < n; ++i) {
      const double pt = std::exp(log_t[i]);
      out.value -= pt * log_s[i];
      g[i] = (std::exp(log_s[i]) - pt) / (temperature * static_cast<double>(batch));
    }
  }
  out.value /= static_cast<double>(batch);
  return out;
}

// alpha * L_class + (1 - alpha) * L_dis(prev client). beta is ignored.
inline LossValue flwf_loss(const Tensor &student, const Tensor &prev_client, const Tensor &labels,
                           const DistillConfig &cfg) {
  detail::check_weight(cfg.alpha, "alpha");
  LossValue total = detail::scaled(classification_loss(student, labels), cfg.alpha);
  detail::accumulate(total, detail::scaled(distillation_loss(student, prev_client, cfg.temperature),
                                           1.0 - cfg.alpha));
  return total;
}

// alpha * L_class + beta * L_dis(prev client) + (1 - alpha - beta) * L_dis(server).
// On a client's first round the previous-client teacher is absent and its
// weight moves to the server term: weights (alpha, 0, 1 - alpha).
inline LossValue flwf2t_loss(const Tensor &student, const Tensor &prev_client, const Tensor &server,
                             const Tensor &labels, const DistillConfig &cfg, bool first_round = false) {
  detail::check_weight(cfg.alpha, "alpha");
  detail::check_weight(cfg.beta, "beta");
  if (cfg.alpha + cfg.beta > 1.0 + 1e-12)
    throw InvalidParameter("alpha + beta must not exceed 1, got " +
                           std::to_string(cfg.alpha + cfg.beta));
  const double w_client = first_round ? 0.0 : cfg.beta;
  double w_server = 1.0 - cfg.alpha - w_client;
  if (w_server <= 1e-12)
    w_server = 0.0;

  LossValue total = detail::scaled(classification_loss(student, labels), cfg.alpha);
  if (w_client > 0.0)
    detail::accumulate(total, detail::scaled(distillation_loss(student, prev_client, cfg.temperature),
                                             w_client));
  if (w_server > 0.0)
    detail::accumulate(total, detail::scaled(distillation_loss(student, server, cfg.temperature),
                                             w_server));
  return total;
}

// Entropy of softmax(teacher / T), averaged over the batch.
inline double softened_entropy(const Tensor &teacher, double temperature) {
  const Tensor p = temperature_softmax(teacher, temperature);
  double h = 0.0;
  for (double v : p.values())
    if (v > 0.0)
      h -= v * std::log(v);
  return h / static_cast<double>(teacher.extent(0));
}

} // namespace fcl
