#pragma once

// The fixed 196-16C_4M_1024D network used by every client and the server:
//
//   x [batch, 128, C]
//   -> conv1d 196 filters, kernel 16, stride 1, no padding -> ReLU   [batch, 113, 196]
//   -> max-pool width 4, stride 4, trailing step dropped             [batch, 28, 196]
//   -> flatten                                                       [batch, 5488]
//   -> dense 1024 -> ReLU -> dropout (train only)                    [batch, 1024]
//   -> dense 6                                                       logits [batch, 6]
//
// Softmax is not part of the network; the losses apply it.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string_view>

#include "fcl/seed.hpp"
#include "fcl/tensor.hpp"

namespace fcl {

inline constexpr std::size_t kSignalLength = 128;
inline constexpr std::size_t kDefaultChannels = 6;
inline constexpr std::size_t kFilters = 196;
inline constexpr std::size_t kKernel = 16;
inline constexpr std::size_t kPoolWidth = 4;
inline constexpr std::size_t kConvLength = kSignalLength - kKernel + 1;  // 113
inline constexpr std::size_t kPoolLength = kConvLength / kPoolWidth;     // 28
inline constexpr std::size_t kFlatWidth = kPoolLength * kFilters;        // 5488
inline constexpr std::size_t kHidden = 1024;
inline constexpr std::size_t kClasses = 6;
inline constexpr double kDefaultDropout = 0.5;

enum class Mode { train, eval };

// Shared layout of parameters and their gradients. Weight layouts:
//   conv_w [196, 16, C]   filter, tap, channel
//   fc1_w  [5488, 1024]   flattened (pool step, filter) -> hidden
//   out_w  [1024, 6]
struct NetworkTensors {
  Tensor conv_w, conv_b, fc1_w, fc1_b, out_w, out_b;

  static constexpr std::array<std::string_view, 6> group_names{"conv_w", "conv_b", "fc1_w",
                                                               "fc1_b",  "out_w",  "out_b"};

  std::array<Tensor *, 6> groups() { return {&conv_w, &conv_b, &fc1_w, &fc1_b, &out_w, &out_b}; }
  std::array<const Tensor *, 6> groups() const {
    return {&conv_w, &conv_b, &fc1_w, &fc1_b, &out_w, &out_b};
  }

  std::size_t channels() const { return conv_w.extent(2); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Tensor *t : groups())
      n += t->size();
    return n;
  }

  friend bool operator==(const NetworkTensors &, const NetworkTensors &) = default;

protected:
  explicit NetworkTensors(std::size_t channels = kDefaultChannels)
      : conv_w({kFilters, kKernel, channels}), conv_b({kFilters}), fc1_w({kFlatWidth, kHidden}),
        fc1_b({kHidden}), out_w({kHidden, kClasses}), out_b({kClasses}) {}
};

struct CnnParams : NetworkTensors {
  explicit CnnParams(std::size_t channels = kDefaultChannels) : NetworkTensors(channels) {}
  friend bool operator==(const CnnParams &, const CnnParams &) = default;
};

struct GradientSet : NetworkTensors {
  explicit GradientSet(std::size_t channels = kDefaultChannels) : NetworkTensors(channels) {}
  friend bool operator==(const GradientSet &, const GradientSet &) = default;
};

inline void require_congruent(const NetworkTensors &a, const NetworkTensors &b, const char *what) {
  const auto ga = a.groups();
  const auto gb = b.groups();
  for (std::size_t i = 0; i < ga.size(); ++i)
    if (ga[i]->shape() != gb[i]->shape())
      throw InvalidInput(std::string(what) + ": " + std::string(NetworkTensors::group_names[i]) +
                         " shape " + shape_string(ga[i]->shape()) + " vs " +
                         shape_string(gb[i]->shape()));
}

// Fan-in scaled uniform weights (He bound sqrt(6/fan_in) for the ReLU layers,
// sqrt(3/fan_in) for the output layer), zero biases.
inline CnnParams init_params(std::uint64_t seed, std::size_t channels = kDefaultChannels) {
  CnnParams p(channels);
  Rng rng(splitmix64(seed));
  auto fill_uniform = [&](Tensor &t, double bound) {
    for (double &v : t.values())
      v = (2.0 * uniform01(rng) - 1.0) * bound;
  };
  fill_uniform(p.conv_w, std::sqrt(6.0 / static_cast<double>(kKernel * channels)));
  fill_uniform(p.fc1_w, std::sqrt(6.0 / static_cast<double>(kFlatWidth)));
  fill_uniform(p.out_w, std::sqrt(3.0 / static_cast<double>(kHidden)));
  return p;
}

// Intermediate values of one forward pass, everything backward needs.
struct ForwardTrace {
  std::size_t batch = 0;
  Mode mode = Mode::eval;
  RowMatrix patches;                 // [batch*113, 16*C] sliding windows of the input
  std::vector<std::uint8_t> pool_at; // argmax tap inside each pool window, [batch, 28, 196]
  Tensor pooled;                     // [batch, 5488], post-ReLU maxima
  Tensor hidden_pre;                 // [batch, 1024]
  Tensor dropout_scale;              // [batch, 1024], 0 or 1/(1-rate); empty in eval mode
  Tensor hidden;                     // [batch, 1024] after ReLU and dropout
  Tensor logits;                     // [batch, 6]
};

namespace detail {

inline void check_input(const CnnParams &p, const Tensor &x) {
  if (x.rank() != 3 || x.extent(1) != kSignalLength || x.extent(2) != p.channels())
    throw InvalidInput("forward: expected input [batch," + std::to_string(kSignalLength) + "," +
                       std::to_string(p.channels()) + "], got " + shape_string(x.shape()));
}

// Row (b*113 + t) holds the contiguous block x[b][t .. t+15][:].
inline RowMatrix im2col(const Tensor &x) {
  const std::size_t batch = x.extent(0), channels = x.extent(2);
  const std::size_t width = kKernel * channels;
  RowMatrix out(static_cast<Eigen::Index>(batch * kConvLength), static_cast<Eigen::Index>(width));
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < kConvLength; ++t)
      std::copy_n(x.data().data() + (b * kSignalLength + t) * channels, width,
                  out.data() + (b * kConvLength + t) * width);
  return out;
}

inline auto conv_matrix(const Tensor &conv_w) {
  return ConstMatrixMap(conv_w.data().data(), kFilters,
                        static_cast<Eigen::Index>(kKernel * conv_w.extent(2)));
}

inline auto conv_matrix(Tensor &conv_w) {
  return MatrixMap(conv_w.data().data(), kFilters, static_cast<Eigen::Index>(kKernel * conv_w.extent(2)));
}

} // namespace detail

inline ForwardTrace forward_trace(const CnnParams &p, const Tensor &x, Mode mode,
                                  std::uint64_t dropout_seed, double dropout_rate = kDefaultDropout) {
  detail::check_input(p, x);
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw InvalidParameter("dropout rate must lie in [0, 1)");
  const std::size_t batch = x.extent(0);

  ForwardTrace tr;
  tr.batch = batch;
  tr.mode = mode;
  tr.patches = detail::im2col(x);
  tr.pool_at.assign(batch * kFlatWidth, 0);
  tr.pooled = Tensor({batch, kFlatWidth});

  RowMatrix z = tr.patches * detail::conv_matrix(p.conv_w).transpose();
  z.rowwise() += ConstVectorMap(p.conv_b.data().data(), kFilters);
  for (std::size_t b = 0; b < batch; ++b) {
    double *pooled = tr.pooled.data().data() + b * kFlatWidth;
    std::uint8_t *at = tr.pool_at.data() + b * kFlatWidth;
    for (std::size_t step = 0; step < kPoolLength; ++step) {
      const double *rows = z.data() + (b * kConvLength + step * kPoolWidth) * kFilters;
      for (std::size_t f = 0; f < kFilters; ++f) {
        std::uint8_t best = 0;
        double best_v = rows[f];
        for (std::uint8_t k = 1; k < kPoolWidth; ++k) {
          const double v = rows[k * kFilters + f];
          if (v > best_v) {
            best_v = v;
            best = k;
          }
        }
        pooled[step * kFilters + f] = best_v > 0.0 ? best_v : 0.0;
        at[step * kFilters + f] = best;
      }
    }
  }

  tr.hidden_pre = Tensor({batch, kHidden});
  tr.hidden_pre.matrix().noalias() = tr.pooled.matrix() * p.fc1_w.matrix();
  tr.hidden_pre.matrix().rowwise() += ConstVectorMap(p.fc1_b.data().data(), kHidden);

  tr.hidden = tr.hidden_pre;
  for (double &v : tr.hidden.values())
    v = v > 0.0 ? v : 0.0;
  if (mode == Mode::train && dropout_rate > 0.0) {
    tr.dropout_scale = Tensor({batch, kHidden});
    Rng rng(splitmix64(dropout_seed));
    const double keep_scale = 1.0 / (1.0 - dropout_rate);
    for (std::size_t i = 0; i < tr.hidden.size(); ++i) {
      const double s = uniform01(rng) >= dropout_rate ? keep_scale : 0.0;
      tr.dropout_scale[i] = s;
      tr.hidden[i] *= s;
    }
  }

  tr.logits = Tensor({batch, kClasses});
  tr.logits.matrix().noalias() = tr.hidden.matrix() * p.out_w.matrix();
  tr.logits.matrix().rowwise() += ConstVectorMap(p.out_b.data().data(), kClasses);
  return tr;
}

// Pre-softmax logits [batch, 6]. Eval mode ignores dropout_seed.
inline Tensor forward(const CnnParams &p, const Tensor &x, Mode mode, std::uint64_t dropout_seed = 0,
                      double dropout_rate = kDefaultDropout) {
  return forward_trace(p, x, mode, dropout_seed, dropout_rate).logits;
}

namespace detail {

// Gradient w.r.t. the 1024 hidden pre-activations.
inline Tensor hidden_grad(const CnnParams &p, const ForwardTrace &tr, const Tensor &loss_grad) {
  Tensor d_hidden({tr.batch, kHidden});
  d_hidden.matrix().noalias() = loss_grad.matrix() * p.out_w.matrix().transpose();
  for (std::size_t i = 0; i < d_hidden.size(); ++i) {
    double s = tr.hidden_pre[i] > 0.0 ? 1.0 : 0.0;
    if (!tr.dropout_scale.values().empty())
      s *= tr.dropout_scale[i];
    d_hidden[i] *= s;
  }
  return d_hidden;
}

// Scatters pooled-output gradients back to the conv pre-activations
// [batch*113, 196]; only window winners with a positive output pass.
inline RowMatrix conv_grad(const ForwardTrace &tr, const Tensor &d_pooled) {
  RowMatrix dz = RowMatrix::Zero(static_cast<Eigen::Index>(tr.batch * kConvLength), kFilters);
  for (std::size_t b = 0; b < tr.batch; ++b) {
    const double *pooled = tr.pooled.data().data() + b * kFlatWidth;
    const double *dp = d_pooled.data().data() + b * kFlatWidth;
    const std::uint8_t *at = tr.pool_at.data() + b * kFlatWidth;
    double *rows = dz.data() + b * kConvLength * kFilters;
    for (std::size_t step = 0; step < kPoolLength; ++step)
      for (std::size_t f = 0; f < kFilters; ++f) {
        const std::size_t i = step * kFilters + f;
        if (pooled[i] > 0.0)
          rows[(step * kPoolWidth + at[i]) * kFilters + f] = dp[i];
      }
  }
  return dz;
}

// Column sums in row order. Eigen's vectorized reduction order depends on
// the buffer's alignment, which would make results vary between calls.
template <class M> Eigen::RowVectorXd column_sums(const M &m) {
  Eigen::RowVectorXd s = Eigen::RowVectorXd::Zero(m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      s(j) += m(i, j);
  return s;
}

inline void check_backward(const CnnParams &p, const ForwardTrace &tr, const Tensor &loss_grad) {
  require_shape(loss_grad, {tr.batch, kClasses}, "backward: loss gradient");
  if (tr.patches.cols() != static_cast<Eigen::Index>(kKernel * p.channels()))
    throw InvalidInput("backward: trace was recorded with a different channel count");
}

} // namespace detail

// Gradient of sum_b <loss_grad[b], logits[b]> with respect to every
// parameter, written into `out` (overwritten, not accumulated).
inline void backward_into(const CnnParams &p, const ForwardTrace &tr, const Tensor &loss_grad,
                          GradientSet &out) {
  detail::check_backward(p, tr, loss_grad);
  require_congruent(p, out, "backward: gradient buffer");
  const auto g = loss_grad.matrix();

  out.out_w.matrix().noalias() = tr.hidden.matrix().transpose() * g;
  VectorMap(out.out_b.data().data(), kClasses) = detail::column_sums(g);

  const Tensor d_hidden = detail::hidden_grad(p, tr, loss_grad);
  out.fc1_w.matrix().noalias() = tr.pooled.matrix().transpose() * d_hidden.matrix();
  VectorMap(out.fc1_b.data().data(), kHidden) = detail::column_sums(d_hidden.matrix());

  Tensor d_pooled({tr.batch, kFlatWidth});
  d_pooled.matrix().noalias() = d_hidden.matrix() * p.fc1_w.matrix().transpose();
  const RowMatrix dz = detail::conv_grad(tr, d_pooled);
  detail::conv_matrix(out.conv_w).noalias() = dz.transpose() * tr.patches;
  VectorMap(out.conv_b.data().data(), kFilters) = detail::column_sums(dz);
}

inline GradientSet backward(const CnnParams &p, const ForwardTrace &tr, const Tensor &loss_grad) {
  GradientSet g(p.channels());
  backward_into(p, tr, loss_grad, g);
  return g;
}

// Recomputes the forward pass with the same (mode, dropout_seed), so the
// dropout mask matches the paired forward call.
inline GradientSet backward(const CnnParams &p, const Tensor &x, const Tensor &loss_grad, Mode mode,
                            std::uint64_t dropout_seed, double dropout_rate = kDefaultDropout) {
  return backward(p, forward_trace(p, x, mode, dropout_seed, dropout_rate), loss_grad);
}

// backward_into followed by apply_sgd, without materializing the gradient:
// each weight matrix is updated in place as soon as every quantity that
// reads its old value has been computed. Equal to the two-step path up to
// rounding.
inline void backward_sgd(CnnParams &p, const ForwardTrace &tr, const Tensor &loss_grad, double eta) {
  detail::check_backward(p, tr, loss_grad);
  const auto g = loss_grad.matrix();

  const Tensor d_hidden = detail::hidden_grad(p, tr, loss_grad);
  p.out_w.matrix().noalias() -= eta * (tr.hidden.matrix().transpose() * g);
  VectorMap(p.out_b.data().data(), kClasses) -= eta * detail::column_sums(g);

  Tensor d_pooled({tr.batch, kFlatWidth});
  d_pooled.matrix().noalias() = d_hidden.matrix() * p.fc1_w.matrix().transpose();
  p.fc1_w.matrix().noalias() -= eta * (tr.pooled.matrix().transpose() * d_hidden.matrix());
  VectorMap(p.fc1_b.data().data(), kHidden) -= eta * detail::column_sums(d_hidden.matrix());

  const RowMatrix dz = detail::conv_grad(tr, d_pooled);
  detail::conv_matrix(p.conv_w).noalias() -= eta * (dz.transpose() * tr.patches);
  VectorMap(p.conv_b.data().data(), kFilters) -= eta * detail::column_sums(dz);
}

inline void apply_sgd(CnnParams &p, const GradientSet &g, double eta) {
  require_congruent(p, g, "sgd_step");
  auto pg = p.groups();
  const auto gg = g.groups();
  for (std::size_t i = 0; i < pg.size(); ++i) {
    auto dst = pg[i]->data();
    const auto src = gg[i]->data();
    for (std::size_t j = 0; j < dst.size(); ++j)
      dst[j] -= eta * src[j];
  }
}

inline CnnParams sgd_step(CnnParams p, const GradientSet &g, double eta) {
  apply_sgd(p, g, eta);
  return p;
}

} // namespace fcl
