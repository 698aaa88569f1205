#pragma once

// Layer primitives with explicit forward/backward passes.
//
// Forward methods are const and write whatever backward needs into an optional cache;
// passing no cache gives a side-effect-free inference pass. Backward methods accumulate
// parameter gradients into Param::grad and return the input gradient.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "spineseg/error.hpp"
#include "spineseg/nn/tensor.hpp"

namespace spineseg::nn {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// Named parameter array. Non-trainable entries (batch-norm running statistics) are
/// persisted in checkpoints but never touched by the optimizer.
template <typename T>
struct Param {
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, std::size_t count, T fill = T{}, bool train = true)
      : name(std::move(n)), value(count, fill), grad(train ? count : 0, T{}), trainable(train) {}

  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T{}); }
};

/// Per-parameter seed, so each array's initial values depend only on (seed, name).
inline std::uint64_t param_seed(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = seed ^ h;  // splitmix64 finalizer
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// He-normal initialization.
template <typename T>
void init_he(Param<T>& p, std::size_t fan_in, std::uint64_t seed) {
  std::mt19937_64 rng(param_seed(seed, p.name));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : p.value) v = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------------------

/// 2D convolution, stride 1, zero padding k/2 ("same" output size).
template <typename T>
class Conv2d {
 public:
  struct Cache {
    std::vector<T> col;  // (cin*k*k) x (N*H*W), row-major
    Shape4 in_shape{};
  };

  Conv2d() = default;
  Conv2d(std::string name, std::size_t cin, std::size_t cout, std::size_t k, bool bias,
         std::uint64_t seed)
      : cin_(cin), cout_(cout), k_(k), has_bias_(bias),
        weight_(name + ".weight", cout * cin * k * k) {
    init_he(weight_, cin * k * k, seed);
    if (bias) bias_ = Param<T>(name + ".bias", cout);
  }

  std::size_t in_channels() const noexcept { return cin_; }
  std::size_t out_channels() const noexcept { return cout_; }

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
    if (x.c() != cin_) {
      throw ShapeError(weight_.name + ": expected " + std::to_string(cin_) + " input channels, got " +
                       std::to_string(x.c()));
    }
    const std::size_t N = x.n(), H = x.h(), W = x.w(), HW = H * W;
    const std::size_t K = cin_ * k_ * k_;
    std::vector<T> col(K * N * HW);
    im2col(x, col);
    RowMat<T> y(cout_, N * HW);
    y.noalias() = ConstMatMap<T>(weight_.value.data(), cout_, K) * ConstMatMap<T>(col.data(), K, N * HW);
    Tensor<T> out(N, cout_, H, W);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t o = 0; o < cout_; ++o) {
        const T b = has_bias_ ? bias_.value[o] : T{};
        const T* src = y.data() + o * N * HW + n * HW;
        T* dst = out.plane_ptr(n, o);
        for (std::size_t p = 0; p < HW; ++p) dst[p] = src[p] + b;
      }
    }
    if (cache) {
      cache->col = std::move(col);
      cache->in_shape = x.shape();
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache) {
    const auto [N, C, H, W] = cache.in_shape;
    const std::size_t HW = H * W, K = cin_ * k_ * k_;
    RowMat<T> g(cout_, N * HW);
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t o = 0; o < cout_; ++o) {
        std::copy_n(dy.plane_ptr(n, o), HW, g.data() + o * N * HW + n * HW);
      }
    }
    const ConstMatMap<T> col(cache.col.data(), K, N * HW);
    MatMap<T>(weight_.grad.data(), cout_, K).noalias() += g * col.transpose();
    if (has_bias_) {
      for (std::size_t o = 0; o < cout_; ++o) bias_.grad[o] += g.row(static_cast<Eigen::Index>(o)).sum();
    }
    RowMat<T> dcol(K, N * HW);
    dcol.noalias() = ConstMatMap<T>(weight_.value.data(), cout_, K).transpose() * g;
    Tensor<T> dx(cache.in_shape);
    col2im(dcol.data(), dx);
    return dx;
  }

  template <typename F>
  void visit(F&& f) {
    f(weight_);
    if (has_bias_) f(bias_);
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  void im2col(const Tensor<T>& x, std::vector<T>& col) const {
    const long N = static_cast<long>(x.n()), H = static_cast<long>(x.h()), W = static_cast<long>(x.w());
    const long HW = H * W, k = static_cast<long>(k_), pad = k / 2;
    const long NHW = N * HW;
    for (long ci = 0; ci < static_cast<long>(cin_); ++ci) {
      for (long ky = 0; ky < k; ++ky) {
        for (long kx = 0; kx < k; ++kx) {
          T* row = col.data() + ((ci * k + ky) * k + kx) * NHW;
          for (long n = 0; n < N; ++n) {
            const T* src = x.plane_ptr(static_cast<std::size_t>(n), static_cast<std::size_t>(ci));
            T* dst = row + n * HW;
            for (long y = 0; y < H; ++y) {
              const long sy = y + ky - pad;
              if (sy < 0 || sy >= H) {
                std::fill_n(dst + y * W, W, T{});
                continue;
              }
              for (long xx = 0; xx < W; ++xx) {
                const long sx = xx + kx - pad;
                dst[y * W + xx] = (sx < 0 || sx >= W) ? T{} : src[sy * W + sx];
              }
            }
          }
        }
      }
    }
  }

  void col2im(const T* col, Tensor<T>& dx) const {
    const long N = static_cast<long>(dx.n()), H = static_cast<long>(dx.h()), W = static_cast<long>(dx.w());
    const long HW = H * W, k = static_cast<long>(k_), pad = k / 2;
    const long NHW = N * HW;
    for (long ci = 0; ci < static_cast<long>(cin_); ++ci) {
      for (long ky = 0; ky < k; ++ky) {
        for (long kx = 0; kx < k; ++kx) {
          const T* row = col + ((ci * k + ky) * k + kx) * NHW;
          for (long n = 0; n < N; ++n) {
            T* dst = dx.plane_ptr(static_cast<std::size_t>(n), static_cast<std::size_t>(ci));
            const T* src = row + n * HW;
            for (long y = 0; y < H; ++y) {
              const long sy = y + ky - pad;
              if (sy < 0 || sy >= H) continue;
              for (long xx = 0; xx < W; ++xx) {
                const long sx = xx + kx - pad;
                if (sx >= 0 && sx < W) dst[sy * W + sx] += src[y * W + xx];
              }
            }
          }
        }
      }
    }
  }

  std::size_t cin_ = 0, cout_ = 0, k_ = 1;
  bool has_bias_ = false;
  Param<T> weight_;
  Param<T> bias_;
};

// ---------------------------------------------------------------------------

/// 2x2 stride-2 transposed convolution (learned 2x upsampling).
template <typename T>
class ConvTranspose2x2 {
 public:
  struct Cache {
    std::vector<T> x;  // cin x (N*h*w)
    Shape4 in_shape{};
  };

  ConvTranspose2x2() = default;
  ConvTranspose2x2(std::string name, std::size_t cin, std::size_t cout, std::uint64_t seed)
      : cin_(cin), cout_(cout), weight_(name + ".weight", cin * cout * 4) {
    init_he(weight_, cin, seed);
  }

  Tensor<T> forward(const Tensor<T>& x, Cache* cache) const {
    if (x.c() != cin_) throw ShapeError(weight_.name + ": input channel mismatch");
    const std::size_t N = x.n(), h = x.h(), w = x.w(), hw = h * w;
    std::vector<T> xm(cin_ * N * hw);
    for (std::size_t c = 0; c < cin_; ++c) {
      for (std::size_t n = 0; n < N; ++n) std::copy_n(x.plane_ptr(n, c), hw, xm.data() + c * N * hw + n * hw);
    }
    RowMat<T> y(cout_ * 4, N * hw);
    y.noalias() = ConstMatMap<T>(weight_.value.data(), cin_, cout_ * 4).transpose() *
                  ConstMatMap<T>(xm.data(), cin_, N * hw);
    Tensor<T> out(N, cout_, 2 * h, 2 * w);
    for (std::size_t o = 0; o < cout_; ++o) {
      for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t b = 0; b < 2; ++b) {
          const T* row = y.data() + ((o * 2 + a) * 2 + b) * N * hw;
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t i = 0; i < h; ++i) {
              for (std::size_t j = 0; j < w; ++j) out(n, o, 2 * i + a, 2 * j + b) = row[n * hw + i * w + j];
            }
          }
        }
      }
    }
    if (cache) {
      cache->x = std::move(xm);
      cache->in_shape = x.shape();
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache) {
    const auto [N, C, h, w] = cache.in_shape;
    const std::size_t hw = h * w;
    RowMat<T> g(cout_ * 4, N * hw);
    for (std::size_t o = 0; o < cout_; ++o) {
      for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t b = 0; b < 2; ++b) {
          T* row = g.data() + ((o * 2 + a) * 2 + b) * N * hw;
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t i = 0; i < h; ++i) {
              for (std::size_t j = 0; j < w; ++j) row[n * hw + i * w + j] = dy(n, o, 2 * i + a, 2 * j + b);
            }
          }
        }
      }
    }
    const ConstMatMap<T> xm(cache.x.data(), cin_, N * hw);
    MatMap<T>(weight_.grad.data(), cin_, cout_ * 4).noalias() += xm * g.transpose();
    RowMat<T> dxm(cin_, N * hw);
    dxm.noalias() = ConstMatMap<T>(weight_.value.data(), cin_, cout_ * 4) * g;
    Tensor<T> dx(cache.in_shape);
    for (std::size_t c = 0; c < cin_; ++c) {
      for (std::size_t n = 0; n < N; ++n) std::copy_n(dxm.data() + c * N * hw + n * hw, hw, dx.plane_ptr(n, c));
    }
    return dx;
  }

  template <typename F>
  void visit(F&& f) { f(weight_); }

  Param<T>& weight() { return weight_; }

 private:
  std::size_t cin_ = 0, cout_ = 0;
  Param<T> weight_;
};

// ---------------------------------------------------------------------------

enum class Mode {
  inference,         // running statistics, no cache
  training,          // batch statistics, running statistics updated
  training_frozen,   // batch statistics, running statistics left alone
};

/// Batch normalization followed by a rectified-linear unit.
template <typename T>
class BatchNormRelu {
 public:
  struct Cache {
    std::vector<T> xhat;
    std::vector<T> inv_std;
    Tensor<T> out;
  };

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNormRelu() = default;
  BatchNormRelu(std::string name, std::size_t channels)
      : channels_(channels),
        gamma_(name + ".gamma", channels, T{1}),
        beta_(name + ".beta", channels, T{0}),
        running_mean_(name + ".running_mean", channels, T{0}, false),
        running_var_(name + ".running_var", channels, T{1}, false) {}

  /// Batch-statistics pass; updates running statistics when mode == training.
  Tensor<T> forward_train(const Tensor<T>& x, Mode mode, Cache* cache) {
    const std::size_t N = x.n(), C = x.c(), HW = x.plane();
    check(x);
    const double M = static_cast<double>(N * HW);
    Tensor<T> out(x.shape());
    std::vector<T> xhat(x.size());
    std::vector<T> inv_std(C);
    for (std::size_t c = 0; c < C; ++c) {
      double sum = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.plane_ptr(n, c);
        for (std::size_t i = 0; i < HW; ++i) sum += p[i];
      }
      const double mean = sum / M;
      double sq = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.plane_ptr(n, c);
        for (std::size_t i = 0; i < HW; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      const double var = sq / M;
      const double istd = 1.0 / std::sqrt(var + kEps);
      inv_std[c] = static_cast<T>(istd);
      const T g = gamma_.value[c], b = beta_.value[c];
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.plane_ptr(n, c);
        T* xh = xhat.data() + (n * C + c) * HW;
        T* o = out.plane_ptr(n, c);
        for (std::size_t i = 0; i < HW; ++i) {
          xh[i] = static_cast<T>((p[i] - mean) * istd);
          const T v = g * xh[i] + b;
          o[i] = v > T{0} ? v : T{0};
        }
      }
      if (mode == Mode::training) {
        const double unbiased = M > 1 ? sq / (M - 1) : var;
        running_mean_.value[c] = static_cast<T>((1 - kMomentum) * running_mean_.value[c] + kMomentum * mean);
        running_var_.value[c] = static_cast<T>((1 - kMomentum) * running_var_.value[c] + kMomentum * unbiased);
      }
    }
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
      cache->out = out;
    }
    return out;
  }

  Tensor<T> forward_inference(const Tensor<T>& x) const {
    check(x);
    const std::size_t N = x.n(), C = x.c(), HW = x.plane();
    Tensor<T> out(x.shape());
    for (std::size_t c = 0; c < C; ++c) {
      const T scale = static_cast<T>(gamma_.value[c] / std::sqrt(static_cast<double>(running_var_.value[c]) + kEps));
      const T shift = beta_.value[c] - scale * running_mean_.value[c];
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x.plane_ptr(n, c);
        T* o = out.plane_ptr(n, c);
        for (std::size_t i = 0; i < HW; ++i) {
          const T v = scale * p[i] + shift;
          o[i] = v > T{0} ? v : T{0};
        }
      }
    }
    return out;
  }

  Tensor<T> backward(const Tensor<T>& dy, const Cache& cache) {
    const std::size_t N = dy.n(), C = dy.c(), HW = dy.plane();
    const double M = static_cast<double>(N * HW);
    Tensor<T> dx(dy.shape());
    std::vector<T> dxhat(N * HW);
    for (std::size_t c = 0; c < C; ++c) {
      const T g = gamma_.value[c];
      double sum_d = 0.0, sum_dx = 0.0, dgamma = 0.0, dbeta = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* d = dy.plane_ptr(n, c);
        const T* o = cache.out.plane_ptr(n, c);
        const T* xh = cache.xhat.data() + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const T dv = o[i] > T{0} ? d[i] : T{0};  // through the ReLU
          dgamma += dv * xh[i];
          dbeta += dv;
          const T dh = dv * g;
          dxhat[n * HW + i] = dh;
          sum_d += dh;
          sum_dx += dh * xh[i];
        }
      }
      gamma_.grad[c] += static_cast<T>(dgamma);
      beta_.grad[c] += static_cast<T>(dbeta);
      const double istd = cache.inv_std[c];
      for (std::size_t n = 0; n < N; ++n) {
        const T* xh = cache.xhat.data() + (n * C + c) * HW;
        T* out = dx.plane_ptr(n, c);
        for (std::size_t i = 0; i < HW; ++i) {
          out[i] = static_cast<T>(istd / M * (M * dxhat[n * HW + i] - sum_d - xh[i] * sum_dx));
        }
      }
    }
    return dx;
  }

  template <typename F>
  void visit(F&& f) {
    f(gamma_);
    f(beta_);
    f(running_mean_);
    f(running_var_);
  }

 private:
  void check(const Tensor<T>& x) const {
    if (x.c() != channels_) throw ShapeError(gamma_.name + ": channel mismatch");
  }

  std::size_t channels_ = 0;
  Param<T> gamma_, beta_, running_mean_, running_var_;
};

// ---------------------------------------------------------------------------

/// 2x2 max pooling, stride 2.
template <typename T>
struct MaxPool2 {
  struct Cache {
    std::vector<std::uint32_t> argmax;  // flat index into the input
    Shape4 in_shape{};
  };

  static Tensor<T> forward(const Tensor<T>& x, Cache* cache) {
    if (x.h() % 2 || x.w() % 2) throw ShapeError("max pool: spatial size must be even, got " + to_string(x.shape()));
    Tensor<T> out(x.n(), x.c(), x.h() / 2, x.w() / 2);
    std::vector<std::uint32_t> arg(cache ? out.size() : 0);
    std::size_t k = 0;
    for (std::size_t n = 0; n < x.n(); ++n) {
      for (std::size_t c = 0; c < x.c(); ++c) {
        for (std::size_t i = 0; i < out.h(); ++i) {
          for (std::size_t j = 0; j < out.w(); ++j, ++k) {
            std::size_t best = ((n * x.c() + c) * x.h() + 2 * i) * x.w() + 2 * j;
            for (std::size_t a = 0; a < 2; ++a) {
              for (std::size_t b = 0; b < 2; ++b) {
                const std::size_t idx = ((n * x.c() + c) * x.h() + 2 * i + a) * x.w() + 2 * j + b;
                if (x.data()[idx] > x.data()[best]) best = idx;
              }
            }
            out.data()[k] = x.data()[best];
            if (cache) arg[k] = static_cast<std::uint32_t>(best);
          }
        }
      }
    }
    if (cache) {
      cache->argmax = std::move(arg);
      cache->in_shape = x.shape();
    }
    return out;
  }

  static Tensor<T> backward(const Tensor<T>& dy, const Cache& cache) {
    Tensor<T> dx(cache.in_shape);
    for (std::size_t k = 0; k < dy.size(); ++k) dx.data()[cache.argmax[k]] += dy.data()[k];
    return dx;
  }
};

// ---------------------------------------------------------------------------

namespace detail {

struct LinearTaps {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w1;  // weight of i1; i0 gets 1 - w1
};

/// Half-pixel-centre linear interpolation taps from `src` to `dst` samples.
inline LinearTaps linear_taps(std::size_t src, std::size_t dst) {
  LinearTaps t;
  t.i0.resize(dst);
  t.i1.resize(dst);
  t.w1.resize(dst);
  const double scale = static_cast<double>(src) / static_cast<double>(dst);
  for (std::size_t d = 0; d < dst; ++d) {
    const double s = std::clamp((d + 0.5) * scale - 0.5, 0.0, static_cast<double>(src - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(s));
    t.i0[d] = i0;
    t.i1[d] = std::min(i0 + 1, src - 1);
    t.w1[d] = s - static_cast<double>(i0);
  }
  return t;
}

}  // namespace detail

/// Bilinear resampling of every plane to (out_h, out_w).
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  const auto ty = detail::linear_taps(x.h(), out_h);
  const auto tx = detail::linear_taps(x.w(), out_w);
  Tensor<T> out(x.n(), x.c(), out_h, out_w);
  for (std::size_t n = 0; n < x.n(); ++n) {
    for (std::size_t c = 0; c < x.c(); ++c) {
      const T* s = x.plane_ptr(n, c);
      T* d = out.plane_ptr(n, c);
      const std::size_t W = x.w();
      for (std::size_t i = 0; i < out_h; ++i) {
        const T wy = static_cast<T>(ty.w1[i]);
        const T* r0 = s + ty.i0[i] * W;
        const T* r1 = s + ty.i1[i] * W;
        for (std::size_t j = 0; j < out_w; ++j) {
          const T wx = static_cast<T>(tx.w1[j]);
          const T top = (1 - wx) * r0[tx.i0[j]] + wx * r0[tx.i1[j]];
          const T bot = (1 - wx) * r1[tx.i0[j]] + wx * r1[tx.i1[j]];
          d[i * out_w + j] = (1 - wy) * top + wy * bot;
        }
      }
    }
  }
  return out;
}

/// Adjoint of upsample_bilinear: scatters `dy` back onto an (in_h, in_w) grid.
template <typename T>
Tensor<T> upsample_bilinear_backward(const Tensor<T>& dy, std::size_t in_h, std::size_t in_w) {
  const auto ty = detail::linear_taps(in_h, dy.h());
  const auto tx = detail::linear_taps(in_w, dy.w());
  Tensor<T> dx(dy.n(), dy.c(), in_h, in_w);
  for (std::size_t n = 0; n < dy.n(); ++n) {
    for (std::size_t c = 0; c < dy.c(); ++c) {
      const T* g = dy.plane_ptr(n, c);
      T* d = dx.plane_ptr(n, c);
      for (std::size_t i = 0; i < dy.h(); ++i) {
        const T wy = static_cast<T>(ty.w1[i]);
        T* r0 = d + ty.i0[i] * in_w;
        T* r1 = d + ty.i1[i] * in_w;
        for (std::size_t j = 0; j < dy.w(); ++j) {
          const T wx = static_cast<T>(tx.w1[j]);
          const T v = g[i * dy.w() + j];
          r0[tx.i0[j]] += (1 - wy) * (1 - wx) * v;
          r0[tx.i1[j]] += (1 - wy) * wx * v;
          r1[tx.i0[j]] += wy * (1 - wx) * v;
          r1[tx.i1[j]] += wy * wx * v;
        }
      }
    }
  }
  return dx;
}

}  // namespace spineseg::nn
