#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "spineseg/error.hpp"
#include "spineseg/grid.hpp"
#include "spineseg/loss.hpp"
#include "spineseg/metrics.hpp"
#include "spineseg/net.hpp"

namespace spineseg {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 4;
  double learning_rate = 1e-3;
  double alpha = 0.6;  // weight of the semantic term in the combined loss
  std::uint64_t seed = 0;
  double validation_fraction = 0.2;

  void validate() const {
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (!(learning_rate >= 0.0 && std::isfinite(learning_rate))) {
      throw ConfigError("train.learning_rate must be finite and >= 0");
    }
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("train.alpha must lie in [0,1]");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("train.validation_fraction must lie in (0,1)");
    }
  }
};

/// One preprocessed input slice and its label mask, same shape.
struct Sample {
  Image image;
  LabelMask mask;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
  double mean_iou = 0.0;  // validation mean IoU
  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::vector<double> step_mean_iou;  // per optimizer step, on the training batch
  friend bool operator==(const TrainHistory&, const TrainHistory&) = default;
};

/// Adaptive-moment gradient descent over every trainable parameter.
template <typename T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(Model<T>& model) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    std::size_t k = 0;
    model.visit([&](nn::Param<T>& p) {
      if (!p.trainable) return;
      if (k == m_.size()) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i];
        m[i] = beta1_ * m[i] + (1 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1 - beta2_) * g * g;
        p.value[i] -= static_cast<T>(lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
      }
      ++k;
    });
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct EvalSummary {
  double loss = 0.0;
  ConfusionCounts counts;
  std::vector<LabelMask> predictions;
};

/// Inference-mode loss and confusion counts over a set of samples.
template <typename T>
EvalSummary evaluate_samples(const Model<T>& model, const std::vector<Sample>& data,
                             const std::vector<std::size_t>& indices, double alpha, int batch_size = 4) {
  EvalSummary out;
  double weighted = 0.0;
  for (std::size_t b = 0; b < indices.size(); b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(indices.size(), b + static_cast<std::size_t>(batch_size));
    std::vector<const Image*> imgs;
    std::vector<LabelMask> targets;
    for (std::size_t i = b; i < e; ++i) {
      imgs.push_back(&data[indices[i]].image);
      targets.push_back(data[indices[i]].mask);
    }
    const auto logits = model.forward(to_batch<T>(imgs));
    weighted += combined_loss(logits, targets, alpha, model.config().head).value * static_cast<double>(e - b);
    auto preds = predict(logits);
    out.counts += confusion(preds, targets);
    for (auto& p : preds) out.predictions.push_back(std::move(p));
  }
  out.loss = indices.empty() ? 0.0 : weighted / static_cast<double>(indices.size());
  return out;
}

template <typename T>
struct TrainResult {
  Model<T> model;  // parameters from the epoch with the lowest validation loss
  TrainHistory history;
  int best_epoch = 0;
};

/// Random train/validation split of `n` items. At least one item always stays in the
/// training part; a single-item dataset has an empty validation part.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, double val_fraction,
                                                                                     std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(n)));
  n_val = std::min(n_val, n - 1);
  std::vector<std::size_t> val(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
  std::sort(val.begin(), val.end());
  std::sort(train.begin(), train.end());
  return {train, val};
}

/// Minimizes the combined loss with Adam. Deterministic for a fixed seed. When the
/// validation split is empty, validation numbers are computed on the training samples.
template <typename T>
TrainResult<T> train(Model<T> model, const std::vector<Sample>& data, const TrainConfig& cfg,
                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (data.empty()) throw DataError("train: empty dataset");
  for (const auto& s : data) {
    require_same_shape(s.image, s.mask, "train sample");
    require_same_shape(s.image, data.front().image, "train dataset");
    for (double v : s.image.values()) {
      if (!std::isfinite(v)) throw DataError("train: non-finite input intensity");
    }
  }

  std::mt19937_64 rng(cfg.seed);
  auto [train_idx, val_idx] = split_indices(data.size(), cfg.validation_fraction, rng);
  const auto& eval_idx = val_idx.empty() ? train_idx : val_idx;

  Adam<T> opt(cfg.learning_rate);
  typename Model<T>::Tape tape;
  TrainResult<T> result{model, {}, 0};
  double best_val = std::numeric_limits<double>::infinity();
  const HeadActivation head = model.config().head;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double loss_sum = 0.0;
    ConfusionCounts epoch_counts;
    for (std::size_t b = 0; b < train_idx.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(train_idx.size(), b + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const Image*> imgs;
      std::vector<LabelMask> targets;
      for (std::size_t i = b; i < e; ++i) {
        imgs.push_back(&data[train_idx[i]].image);
        targets.push_back(data[train_idx[i]].mask);
      }
      model.zero_grad();
      const auto logits = model.forward_train(to_batch<T>(imgs), tape);
      LossValue<T> loss;
      try {
        loss = combined_loss(logits, targets, cfg.alpha, head, true);
      } catch (const DivergenceError& err) {
        throw DivergenceError("epoch " + std::to_string(epoch) + ": " + err.what());
      }
      if (!std::isfinite(loss.value)) {
        throw DivergenceError("epoch " + std::to_string(epoch) + ": non-finite training loss");
      }
      model.backward(loss.grad, tape);
      opt.step(model);
      model.visit([epoch](const nn::Param<T>& p) {
        for (T v : p.value) {
          if (!std::isfinite(static_cast<double>(v))) {
            throw DivergenceError("epoch " + std::to_string(epoch) + ": non-finite value in " + p.name);
          }
        }
      });

      const auto batch_counts = confusion(predict(logits), targets);
      epoch_counts += batch_counts;
      result.history.step_mean_iou.push_back(mean_iou(batch_counts));
      loss_sum += loss.value * static_cast<double>(e - b);
    }

    const auto val = evaluate_samples(model, data, eval_idx, cfg.alpha, cfg.batch_size);
    if (!std::isfinite(val.loss)) {
      throw DivergenceError("epoch " + std::to_string(epoch) + ": non-finite validation loss");
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_idx.size());
    rec.val_loss = val.loss;
    rec.train_accuracy = mean_class_accuracy(epoch_counts);
    rec.val_accuracy = mean_class_accuracy(val.counts);
    rec.mean_iou = mean_iou(val.counts);
    result.history.epochs.push_back(rec);
    if (val.loss < best_val) {
      best_val = val.loss;
      result.model = model;
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

inline constexpr const char* kHistoryHeader = "epoch,train_loss,val_loss,train_acc,val_acc,mean_iou";

inline void write_history_csv(const TrainHistory& h, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write " + path.string());
  os << kHistoryHeader << '\n';
  char buf[256];
  for (const auto& e : h.epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.17g\n", e.epoch, e.train_loss, e.val_loss,
                  e.train_accuracy, e.val_accuracy, e.mean_iou);
    os << buf;
  }
  if (!os) throw Error("failed writing " + path.string());
}

/// Reads the per-epoch rows back; the step trace is not part of the CSV.
inline TrainHistory read_history_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != kHistoryHeader) throw DataError(path.string() + ": bad history header");
  TrainHistory h;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    EpochRecord e;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf", &e.epoch, &e.train_loss, &e.val_loss, &e.train_accuracy,
                    &e.val_accuracy, &e.mean_iou) != 6) {
      throw DataError(path.string() + ": malformed history row '" + line + "'");
    }
    h.epochs.push_back(e);
  }
  return h;
}

}  // namespace spineseg
