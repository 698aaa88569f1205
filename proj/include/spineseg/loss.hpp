#pragma once

// Segmentation losses on (N, C, H, W) logits against integer label masks.
//
//   semantic:  mean over pixels of -log p(true class)                (cross-entropy)
//   instance:  1 - mean over present classes of soft Dice           (eps = 1e-6)
//   combined:  alpha * semantic + (1 - alpha) * instance
//
// p is the softmax over channels, or an independent sigmoid per channel when the model
// head is configured that way (the semantic term then becomes per-channel binary CE).

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "spineseg/error.hpp"
#include "spineseg/grid.hpp"
#include "spineseg/net.hpp"

namespace spineseg {

inline constexpr double kDiceEps = 1e-6;

template <typename T>
struct LossValue {
  double value = 0.0;
  Tensor<T> grad;  // d value / d logits; empty unless requested
};

namespace detail {

template <typename T>
void check_loss_inputs(const Tensor<T>& logits, const std::vector<LabelMask>& targets) {
  if (targets.size() != logits.n()) throw ShapeError("loss: batch size mismatch");
  for (const auto& t : targets) {
    if (t.rows() != logits.h() || t.cols() != logits.w()) throw ShapeError("loss: target shape mismatch");
    for (auto v : t.values()) {
      if (v >= logits.c()) throw DataError("loss: target class " + std::to_string(v) + " out of range");
    }
  }
  for (auto v : logits.values()) {
    if (!std::isfinite(static_cast<double>(v))) throw DivergenceError("non-finite logits");
  }
}

/// Class probabilities in double precision, same layout as the logits.
template <typename T>
std::vector<double> probabilities(const Tensor<T>& logits, HeadActivation head) {
  const std::size_t N = logits.n(), C = logits.c(), HW = logits.plane();
  std::vector<double> p(logits.size());
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t i = 0; i < HW; ++i) {
      if (head == HeadActivation::sigmoid) {
        for (std::size_t c = 0; c < C; ++c) {
          p[(n * C + c) * HW + i] = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.plane_ptr(n, c)[i])));
        }
        continue;
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(logits.plane_ptr(n, c)[i]));
      double z = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double e = std::exp(static_cast<double>(logits.plane_ptr(n, c)[i]) - mx);
        p[(n * C + c) * HW + i] = e;
        z += e;
      }
      for (std::size_t c = 0; c < C; ++c) p[(n * C + c) * HW + i] /= z;
    }
  }
  return p;
}

/// log p(class c) at one pixel for the softmax head, computed stably.
template <typename T>
double log_softmax_at(const Tensor<T>& logits, std::size_t n, std::size_t i, std::size_t cls) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < logits.c(); ++c) mx = std::max(mx, static_cast<double>(logits.plane_ptr(n, c)[i]));
  double z = 0.0;
  for (std::size_t c = 0; c < logits.c(); ++c) z += std::exp(static_cast<double>(logits.plane_ptr(n, c)[i]) - mx);
  return static_cast<double>(logits.plane_ptr(n, cls)[i]) - mx - std::log(z);
}

/// log(sigmoid(z)) and log(1 - sigmoid(z)) without overflow.
inline double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

}  // namespace detail

template <typename T>
LossValue<T> semantic_loss(const Tensor<T>& logits, const std::vector<LabelMask>& targets,
                           HeadActivation head = HeadActivation::softmax, bool with_grad = false) {
  detail::check_loss_inputs(logits, targets);
  const std::size_t N = logits.n(), C = logits.c(), HW = logits.plane();
  const double M = static_cast<double>(N * HW);
  LossValue<T> out;
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t i = 0; i < HW; ++i) {
      const std::size_t t = targets[n].data()[i];
      if (head == HeadActivation::softmax) {
        total -= detail::log_softmax_at(logits, n, i, t);
      } else {
        for (std::size_t c = 0; c < C; ++c) {
          const double z = logits.plane_ptr(n, c)[i];
          total -= c == t ? detail::log_sigmoid(z) : detail::log_sigmoid(-z);
        }
      }
    }
  }
  out.value = total / M;
  if (with_grad) {
    const auto p = detail::probabilities(logits, head);
    out.grad = Tensor<T>(logits.shape());
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t c = 0; c < C; ++c) {
        T* g = out.grad.plane_ptr(n, c);
        for (std::size_t i = 0; i < HW; ++i) {
          const double onehot = targets[n].data()[i] == c ? 1.0 : 0.0;
          g[i] = static_cast<T>((p[(n * C + c) * HW + i] - onehot) / M);
        }
      }
    }
  }
  return out;
}

/// Soft multi-class Dice loss over the whole batch. A class takes part when it occurs in
/// the target or in the argmax prediction.
template <typename T>
LossValue<T> instance_loss(const Tensor<T>& logits, const std::vector<LabelMask>& targets,
                           HeadActivation head = HeadActivation::softmax, bool with_grad = false) {
  detail::check_loss_inputs(logits, targets);
  const std::size_t N = logits.n(), C = logits.c(), HW = logits.plane();
  const auto p = detail::probabilities(logits, head);
  const auto hard = predict(logits);

  std::vector<double> inter(C, 0.0), psum(C, 0.0), gsum(C, 0.0);
  std::vector<bool> present(C, false);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t i = 0; i < HW; ++i) {
      const std::size_t t = targets[n].data()[i];
      gsum[t] += 1.0;
      present[t] = true;
      present[hard[n].data()[i]] = true;
      for (std::size_t c = 0; c < C; ++c) {
        const double pc = p[(n * C + c) * HW + i];
        psum[c] += pc;
        if (c == t) inter[c] += pc;
      }
    }
  }
  std::size_t n_present = 0;
  double dice_sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    if (!present[c]) continue;
    ++n_present;
    dice_sum += (2.0 * inter[c] + kDiceEps) / (psum[c] + gsum[c] + kDiceEps);
  }
  LossValue<T> out;
  out.value = n_present ? 1.0 - dice_sum / static_cast<double>(n_present) : 0.0;
  if (!with_grad) return out;

  out.grad = Tensor<T>(logits.shape());
  if (!n_present) return out;
  // d loss / d p_c at a pixel with one-hot target g
  std::vector<double> dp(C);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t i = 0; i < HW; ++i) {
      const std::size_t t = targets[n].data()[i];
      for (std::size_t c = 0; c < C; ++c) {
        if (!present[c]) {
          dp[c] = 0.0;
          continue;
        }
        const double denom = psum[c] + gsum[c] + kDiceEps;
        const double g = c == t ? 1.0 : 0.0;
        const double d_dice = (2.0 * g * denom - (2.0 * inter[c] + kDiceEps)) / (denom * denom);
        dp[c] = -d_dice / static_cast<double>(n_present);
      }
      if (head == HeadActivation::softmax) {
        double dot = 0.0;
        for (std::size_t c = 0; c < C; ++c) dot += p[(n * C + c) * HW + i] * dp[c];
        for (std::size_t c = 0; c < C; ++c) {
          const double pc = p[(n * C + c) * HW + i];
          out.grad.plane_ptr(n, c)[i] = static_cast<T>(pc * (dp[c] - dot));
        }
      } else {
        for (std::size_t c = 0; c < C; ++c) {
          const double pc = p[(n * C + c) * HW + i];
          out.grad.plane_ptr(n, c)[i] = static_cast<T>(dp[c] * pc * (1.0 - pc));
        }
      }
    }
  }
  return out;
}

template <typename T>
LossValue<T> combined_loss(const Tensor<T>& logits, const std::vector<LabelMask>& targets, double alpha,
                           HeadActivation head = HeadActivation::softmax, bool with_grad = false) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1]");
  auto sem = semantic_loss(logits, targets, head, with_grad);
  auto inst = instance_loss(logits, targets, head, with_grad);
  LossValue<T> out;
  out.value = alpha * sem.value + (1.0 - alpha) * inst.value;
  if (with_grad) {
    out.grad = Tensor<T>(logits.shape());
    for (std::size_t i = 0; i < out.grad.size(); ++i) {
      out.grad.data()[i] = static_cast<T>(alpha * sem.grad.data()[i] + (1.0 - alpha) * inst.grad.data()[i]);
    }
  }
  return out;
}

}  // namespace spineseg
