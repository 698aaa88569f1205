#pragma once

// Attention U-Net with configurable depth: `levels` encoder blocks, a bottleneck,
// `levels` decoder blocks, and an attention gate on every skip connection.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "spineseg/error.hpp"
#include "spineseg/grid.hpp"
#include "spineseg/labels.hpp"
#include "spineseg/nn/layers.hpp"
#include "spineseg/nn/tensor.hpp"

namespace spineseg {

using nn::Mode;
using nn::Tensor;

enum class GateMode { attention, passthrough };
/// How logits are turned into class probabilities inside the losses.
enum class HeadActivation { softmax, sigmoid };
enum class UpsampleMode { bilinear, transposed };

inline std::string_view to_string(GateMode m) { return m == GateMode::attention ? "attention" : "passthrough"; }
inline std::string_view to_string(HeadActivation h) { return h == HeadActivation::softmax ? "softmax" : "sigmoid"; }
inline std::string_view to_string(UpsampleMode u) { return u == UpsampleMode::bilinear ? "bilinear" : "transposed"; }

inline GateMode parse_gate_mode(std::string_view s) {
  if (s == "attention") return GateMode::attention;
  if (s == "passthrough") return GateMode::passthrough;
  throw ConfigError("unknown gate_mode '" + std::string(s) + "'");
}
inline HeadActivation parse_head(std::string_view s) {
  if (s == "softmax") return HeadActivation::softmax;
  if (s == "sigmoid") return HeadActivation::sigmoid;
  throw ConfigError("unknown head activation '" + std::string(s) + "'");
}
inline UpsampleMode parse_upsample(std::string_view s) {
  if (s == "bilinear") return UpsampleMode::bilinear;
  if (s == "transposed") return UpsampleMode::transposed;
  throw ConfigError("unknown upsample mode '" + std::string(s) + "'");
}

struct ModelConfig {
  int levels = 6;
  int base_channels = 16;
  int in_channels = 1;
  int n_classes = kNumClasses;
  GateMode gate_mode = GateMode::attention;
  HeadActivation head = HeadActivation::softmax;
  UpsampleMode upsample = UpsampleMode::bilinear;

  void validate() const {
    if (levels < 1) throw ConfigError("net.levels must be >= 1");
    if (base_channels < 1) throw ConfigError("net.base_channels must be >= 1");
    if (in_channels < 1) throw ConfigError("net.in_channels must be >= 1");
    if (n_classes < 2) throw ConfigError("net.n_classes must be >= 2");
    if (levels > 12) throw ConfigError("net.levels must be <= 12");
  }

  /// Channel width of encoder level `l` (0-based); l == levels is the bottleneck.
  std::size_t width(int l) const { return static_cast<std::size_t>(base_channels) << l; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// ---------------------------------------------------------------------------

/// Two 3x3 convolutions, each followed by batch norm and ReLU.
template <typename T>
class DoubleConv {
 public:
  struct Cache {
    typename nn::Conv2d<T>::Cache c1, c2;
    typename nn::BatchNormRelu<T>::Cache b1, b2;
  };

  DoubleConv() = default;
  DoubleConv(const std::string& name, std::size_t cin, std::size_t cout, std::uint64_t seed)
      : conv1_(name + ".conv1", cin, cout, 3, false, seed),
        bn1_(name + ".bn1", cout),
        conv2_(name + ".conv2", cout, cout, 3, false, seed),
        bn2_(name + ".bn2", cout) {}

  Tensor<T> forward_train(const Tensor<T>& x, Mode mode, Cache& c) {
    auto h = bn1_.forward_train(conv1_.forward(x, &c.c1), mode, &c.b1);
    return bn2_.forward_train(conv2_.forward(h, &c.c2), mode, &c.b2);
  }
  Tensor<T> forward(const Tensor<T>& x) const {
    auto h = bn1_.forward_inference(conv1_.forward(x, nullptr));
    return bn2_.forward_inference(conv2_.forward(h, nullptr));
  }
  Tensor<T> backward(const Tensor<T>& dy, const Cache& c) {
    auto d = conv2_.backward(bn2_.backward(dy, c.b2), c.c2);
    return conv1_.backward(bn1_.backward(d, c.b1), c.c1);
  }
  template <typename F>
  void visit(F&& f) {
    conv1_.visit(f);
    bn1_.visit(f);
    conv2_.visit(f);
    bn2_.visit(f);
  }

 private:
  nn::Conv2d<T> conv1_;
  nn::BatchNormRelu<T> bn1_;
  nn::Conv2d<T> conv2_;
  nn::BatchNormRelu<T> bn2_;
};

/// 2x upsampling of the coarser decoder signal to the skip width.
template <typename T>
class UpBlock {
 public:
  struct Cache {
    typename nn::Conv2d<T>::Cache conv;
    typename nn::ConvTranspose2x2<T>::Cache tconv;
    typename nn::BatchNormRelu<T>::Cache bn;
    nn::Shape4 in_shape{};
  };

  UpBlock() = default;
  UpBlock(const std::string& name, std::size_t cin, std::size_t cout, UpsampleMode mode, std::uint64_t seed)
      : mode_(mode), bn_(name + ".bn", cout) {
    if (mode == UpsampleMode::bilinear) {
      conv_ = nn::Conv2d<T>(name + ".conv", cin, cout, 3, false, seed);
    } else {
      tconv_ = nn::ConvTranspose2x2<T>(name + ".tconv", cin, cout, seed);
    }
  }

  Tensor<T> forward_train(const Tensor<T>& x, Mode mode, Cache& c) {
    c.in_shape = x.shape();
    return bn_.forward_train(scale_up(x, &c), mode, &c.bn);
  }
  Tensor<T> forward(const Tensor<T>& x) const { return bn_.forward_inference(scale_up(x, nullptr)); }
  Tensor<T> backward(const Tensor<T>& dy, const Cache& c) {
    auto d = bn_.backward(dy, c.bn);
    if (mode_ == UpsampleMode::transposed) return tconv_.backward(d, c.tconv);
    auto dup = conv_.backward(d, c.conv);
    return nn::upsample_bilinear_backward(dup, c.in_shape[2], c.in_shape[3]);
  }
  template <typename F>
  void visit(F&& f) {
    if (mode_ == UpsampleMode::bilinear) conv_.visit(f); else tconv_.visit(f);
    bn_.visit(f);
  }

 private:
  Tensor<T> scale_up(const Tensor<T>& x, Cache* c) const {
    if (mode_ == UpsampleMode::transposed) return tconv_.forward(x, c ? &c->tconv : nullptr);
    return conv_.forward(nn::upsample_bilinear(x, 2 * x.h(), 2 * x.w()), c ? &c->conv : nullptr);
  }

  UpsampleMode mode_ = UpsampleMode::bilinear;
  nn::Conv2d<T> conv_;
  nn::ConvTranspose2x2<T> tconv_;
  nn::BatchNormRelu<T> bn_;
};

// ---------------------------------------------------------------------------

/// Additive attention gate. With skip x (N,C,H,W) and coarser gating g (N,Cg,h,w):
///   q = relu(Wx x + up(Wg g + bg)),  alpha = sigmoid(psi q + bpsi),  out = alpha * x
/// where up() is bilinear resampling to (H,W) and alpha has one channel broadcast over C.
/// In passthrough mode the gate holds no parameters and returns x.
template <typename T>
class AttentionGate {
 public:
  struct Cache {
    typename nn::Conv2d<T>::Cache theta, phi, psi;
    Tensor<T> skip;
    Tensor<T> pre;    // Wx x + up(Wg g) before the ReLU
    Tensor<T> alpha;  // (N,1,H,W)
    std::size_t gate_h = 0, gate_w = 0;
  };

  struct Result {
    Tensor<T> out;
    Tensor<T> alpha;
  };

  AttentionGate() = default;
  AttentionGate(const std::string& name, std::size_t skip_channels, std::size_t gate_channels,
                GateMode mode, std::uint64_t seed)
      : mode_(mode), skip_channels_(skip_channels), gate_channels_(gate_channels) {
    if (mode == GateMode::passthrough) return;
    const std::size_t inter = std::max<std::size_t>(1, skip_channels / 2);
    theta_ = nn::Conv2d<T>(name + ".theta", skip_channels, inter, 1, false, seed);
    phi_ = nn::Conv2d<T>(name + ".phi", gate_channels, inter, 1, true, seed);
    psi_ = nn::Conv2d<T>(name + ".psi", inter, 1, 1, true, seed);
  }

  GateMode mode() const noexcept { return mode_; }

  /// Gated skip plus the coefficient map (all ones in passthrough mode).
  Result apply(const Tensor<T>& skip, const Tensor<T>& gating, Cache* c = nullptr) const {
    check(skip, gating);
    if (mode_ == GateMode::passthrough) {
      return {skip, Tensor<T>(skip.n(), 1, skip.h(), skip.w(), T{1})};
    }
    auto theta = theta_.forward(skip, c ? &c->theta : nullptr);
    auto phi = nn::upsample_bilinear(phi_.forward(gating, c ? &c->phi : nullptr), skip.h(), skip.w());
    theta += phi;
    Tensor<T> q(theta.shape());
    for (std::size_t i = 0; i < q.size(); ++i) q.data()[i] = theta.data()[i] > T{0} ? theta.data()[i] : T{0};
    auto psi = psi_.forward(q, c ? &c->psi : nullptr);
    Tensor<T> alpha(psi.shape());
    for (std::size_t i = 0; i < psi.size(); ++i) alpha.data()[i] = T{1} / (T{1} + std::exp(-psi.data()[i]));
    Tensor<T> out(skip.shape());
    const std::size_t HW = skip.plane();
    for (std::size_t n = 0; n < skip.n(); ++n) {
      const T* a = alpha.plane_ptr(n, 0);
      for (std::size_t ch = 0; ch < skip.c(); ++ch) {
        const T* s = skip.plane_ptr(n, ch);
        T* o = out.plane_ptr(n, ch);
        for (std::size_t p = 0; p < HW; ++p) o[p] = a[p] * s[p];
      }
    }
    if (c) {
      c->skip = skip;
      c->pre = std::move(theta);
      c->alpha = alpha;
      c->gate_h = gating.h();
      c->gate_w = gating.w();
    }
    return {std::move(out), std::move(alpha)};
  }

  /// Returns (d skip, d gating).
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& dout, const Cache& c, const nn::Shape4& gate_shape) {
    if (mode_ == GateMode::passthrough) return {dout, Tensor<T>(gate_shape)};
    const std::size_t N = dout.n(), C = dout.c(), HW = dout.plane();
    Tensor<T> dskip(dout.shape());
    Tensor<T> dpsi(N, 1, dout.h(), dout.w());
    for (std::size_t n = 0; n < N; ++n) {
      const T* a = c.alpha.plane_ptr(n, 0);
      T* dp = dpsi.plane_ptr(n, 0);
      for (std::size_t ch = 0; ch < C; ++ch) {
        const T* d = dout.plane_ptr(n, ch);
        const T* s = c.skip.plane_ptr(n, ch);
        T* dx = dskip.plane_ptr(n, ch);
        for (std::size_t p = 0; p < HW; ++p) {
          dx[p] = a[p] * d[p];
          dp[p] += d[p] * s[p];
        }
      }
      for (std::size_t p = 0; p < HW; ++p) dp[p] *= a[p] * (T{1} - a[p]);
    }
    auto dq = psi_.backward(dpsi, c.psi);
    for (std::size_t i = 0; i < dq.size(); ++i) {
      if (!(c.pre.data()[i] > T{0})) dq.data()[i] = T{0};
    }
    dskip += theta_.backward(dq, c.theta);
    auto dphi = nn::upsample_bilinear_backward(dq, c.gate_h, c.gate_w);
    return {std::move(dskip), phi_.backward(dphi, c.phi)};
  }

  template <typename F>
  void visit(F&& f) {
    if (mode_ == GateMode::passthrough) return;
    theta_.visit(f);
    phi_.visit(f);
    psi_.visit(f);
  }

 private:
  void check(const Tensor<T>& skip, const Tensor<T>& gating) const {
    if (skip.c() != skip_channels_ || gating.c() != gate_channels_ || skip.n() != gating.n() ||
        gating.h() > skip.h() || gating.w() > skip.w() || gating.h() == 0 || gating.w() == 0) {
      throw ShapeError("attention gate: skip " + nn::to_string(skip.shape()) + " incompatible with gating " +
                       nn::to_string(gating.shape()));
    }
  }

  GateMode mode_ = GateMode::attention;
  std::size_t skip_channels_ = 0, gate_channels_ = 0;
  nn::Conv2d<T> theta_, phi_, psi_;
};

// ---------------------------------------------------------------------------

template <typename T>
class Model {
 public:
  /// Everything the backward pass needs from one training forward pass.
  struct Tape {
    std::vector<typename DoubleConv<T>::Cache> enc, dec;
    typename DoubleConv<T>::Cache bottleneck;
    std::vector<typename nn::MaxPool2<T>::Cache> pool;
    std::vector<typename UpBlock<T>::Cache> up;
    std::vector<typename AttentionGate<T>::Cache> gate;
    std::vector<nn::Shape4> gate_shape;
    typename nn::Conv2d<T>::Cache head;
  };

  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
    cfg.validate();
    const int L = cfg.levels;
    for (int l = 0; l < L; ++l) {
      const std::size_t cin = l == 0 ? static_cast<std::size_t>(cfg.in_channels) : cfg.width(l - 1);
      enc_.emplace_back("enc" + std::to_string(l + 1), cin, cfg.width(l), seed);
    }
    bottleneck_ = DoubleConv<T>("bottleneck", cfg.width(L - 1), cfg.width(L), seed);
    for (int l = 0; l < L; ++l) {
      const std::string lvl = std::to_string(l + 1);
      up_.emplace_back("up" + lvl, cfg.width(l + 1), cfg.width(l), cfg.upsample, seed);
      gates_.emplace_back("gate" + lvl, cfg.width(l), cfg.width(l + 1), cfg.gate_mode, seed);
      dec_.emplace_back("dec" + lvl, 2 * cfg.width(l), cfg.width(l), seed);
    }
    head_ = nn::Conv2d<T>("head", cfg.width(0), static_cast<std::size_t>(cfg.n_classes), 1, true, seed);
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  std::uint64_t seed() const noexcept { return seed_; }

  /// Spatial sizes must be divisible by this.
  std::size_t size_multiple() const { return std::size_t{1} << cfg_.levels; }

  /// Side-effect-free inference pass (running batch-norm statistics).
  Tensor<T> forward(const Tensor<T>& x) const {
    check_input(x);
    const int L = cfg_.levels;
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (int l = 0; l < L; ++l) {
      skips.push_back(enc_[l].forward(h));
      h = nn::MaxPool2<T>::forward(skips.back(), nullptr);
    }
    Tensor<T> y = bottleneck_.forward(h);
    for (int l = L - 1; l >= 0; --l) {
      auto u = up_[l].forward(y);
      auto g = gates_[l].apply(skips[l], y);
      y = dec_[l].forward(nn::concat_channels(g.out, u));
    }
    return head_.forward(y, nullptr);
  }

  /// Training pass with batch statistics; records the tape for backward().
  Tensor<T> forward_train(const Tensor<T>& x, Tape& tape, Mode mode = Mode::training) {
    check_input(x);
    const auto L = static_cast<std::size_t>(cfg_.levels);
    tape.enc.resize(L);
    tape.dec.resize(L);
    tape.pool.resize(L);
    tape.up.resize(L);
    tape.gate.resize(L);
    tape.gate_shape.resize(L);
    std::vector<Tensor<T>> skips;
    Tensor<T> h = x;
    for (std::size_t l = 0; l < L; ++l) {
      skips.push_back(enc_[l].forward_train(h, mode, tape.enc[l]));
      h = nn::MaxPool2<T>::forward(skips.back(), &tape.pool[l]);
    }
    Tensor<T> y = bottleneck_.forward_train(h, mode, tape.bottleneck);
    for (std::size_t i = L; i-- > 0;) {
      auto u = up_[i].forward_train(y, mode, tape.up[i]);
      auto g = gates_[i].apply(skips[i], y, &tape.gate[i]);
      tape.gate_shape[i] = y.shape();
      y = dec_[i].forward_train(nn::concat_channels(g.out, u), mode, tape.dec[i]);
    }
    return head_.forward(y, &tape.head);
  }

  /// Accumulates parameter gradients for d(loss)/d(logits).
  void backward(const Tensor<T>& dlogits, const Tape& tape) {
    const auto L = static_cast<std::size_t>(cfg_.levels);
    Tensor<T> dy = head_.backward(dlogits, tape.head);
    std::vector<Tensor<T>> dskips(L);
    for (std::size_t l = 0; l < L; ++l) {
      auto dcat = dec_[l].backward(dy, tape.dec[l]);
      auto [dgated, dup] = nn::split_channels(dcat, cfg_.width(static_cast<int>(l)));
      auto [dskip, dgate] = gates_[l].backward(dgated, tape.gate[l], tape.gate_shape[l]);
      dskips[l] = std::move(dskip);
      dy = up_[l].backward(dup, tape.up[l]);
      dy += dgate;
    }
    Tensor<T> dh = bottleneck_.backward(dy, tape.bottleneck);
    for (std::size_t l = L; l-- > 0;) {
      dh = nn::MaxPool2<T>::backward(dh, tape.pool[l]);
      dh += dskips[l];
      dh = enc_[l].backward(dh, tape.enc[l]);
    }
  }

  /// Visits every parameter array (trainable and running statistics) in a fixed order.
  template <typename F>
  void visit(F&& f) {
    for (auto& b : enc_) b.visit(f);
    bottleneck_.visit(f);
    for (std::size_t l = 0; l < up_.size(); ++l) {
      up_[l].visit(f);
      gates_[l].visit(f);
      dec_[l].visit(f);
    }
    head_.visit(f);
  }

  template <typename F>
  void visit(F&& f) const {
    const_cast<Model*>(this)->visit([&f](const nn::Param<T>& p) { f(p); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&n](const nn::Param<T>& p) {
      if (p.trainable) n += p.size();
    });
    return n;
  }

  void zero_grad() {
    visit([](nn::Param<T>& p) { p.zero_grad(); });
  }

  /// Encoder channel width per level.
  std::vector<std::size_t> encoder_widths() const {
    std::vector<std::size_t> w;
    for (int l = 0; l < cfg_.levels; ++l) w.push_back(cfg_.width(l));
    return w;
  }

  const AttentionGate<T>& gate(std::size_t level) const { return gates_.at(level); }
  nn::Conv2d<T>& head() { return head_; }

 private:
  void check_input(const Tensor<T>& x) const {
    const std::size_t m = size_multiple();
    if (x.c() != static_cast<std::size_t>(cfg_.in_channels)) {
      throw ShapeError("model input must have " + std::to_string(cfg_.in_channels) + " channel(s), got " +
                       nn::to_string(x.shape()));
    }
    if (x.n() == 0 || x.h() == 0 || x.w() == 0 || x.h() % m || x.w() % m) {
      throw ShapeError("model input spatial size must be a positive multiple of " + std::to_string(m) +
                       ", got " + nn::to_string(x.shape()));
    }
  }

  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  std::vector<DoubleConv<T>> enc_;
  DoubleConv<T> bottleneck_;
  std::vector<UpBlock<T>> up_;
  std::vector<AttentionGate<T>> gates_;
  std::vector<DoubleConv<T>> dec_;
  nn::Conv2d<T> head_;
};

template <typename T = float>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return Model<T>(cfg, seed);
}

/// Stand-alone gate evaluation: the coefficients and the gated skip features.
template <typename T>
typename AttentionGate<T>::Result attention_gate(const AttentionGate<T>& gate, const Tensor<T>& skip,
                                                 const Tensor<T>& gating) {
  return gate.apply(skip, gating);
}

/// Per-pixel argmax over channels (lowest class index wins ties).
template <typename T>
std::vector<LabelMask> predict(const Tensor<T>& logits) {
  std::vector<LabelMask> out;
  const std::size_t HW = logits.plane();
  for (std::size_t n = 0; n < logits.n(); ++n) {
    LabelMask m(logits.h(), logits.w(), 0);
    for (std::size_t p = 0; p < HW; ++p) {
      std::size_t best = 0;
      T best_v = logits.plane_ptr(n, 0)[p];
      for (std::size_t c = 1; c < logits.c(); ++c) {
        const T v = logits.plane_ptr(n, c)[p];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      m.data()[p] = static_cast<std::uint8_t>(best);
    }
    out.push_back(std::move(m));
  }
  return out;
}

/// Stacks preprocessed slices into an (N,1,H,W) batch.
template <typename T>
Tensor<T> to_batch(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("empty batch");
  const Image& first = *images.front();
  Tensor<T> x(images.size(), 1, first.rows(), first.cols());
  for (std::size_t n = 0; n < images.size(); ++n) {
    require_same_shape(*images[n], first, "batch");
    std::transform(images[n]->data(), images[n]->data() + first.size(), x.plane_ptr(n, 0),
                   [](double v) { return static_cast<T>(v); });
  }
  return x;
}

template <typename T>
Tensor<T> to_batch(const std::vector<Image>& images) {
  std::vector<const Image*> ptrs;
  for (const auto& img : images) ptrs.push_back(&img);
  return to_batch<T>(ptrs);
}

}  // namespace spineseg
