#pragma once

// Pixel-level one-vs-rest confusion counts and the rates derived from them.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "spineseg/error.hpp"
#include "spineseg/grid.hpp"
#include "spineseg/labels.hpp"

namespace spineseg {

struct ClassCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
  friend bool operator==(const ClassCounts&, const ClassCounts&) = default;
};

/// Indexed by class code; entry 0 (background) is kept for completeness but never enters
/// the vertebra means.
struct ConfusionCounts {
  std::array<ClassCounts, kNumClasses> classes{};

  const ClassCounts& operator[](int cls) const { return classes.at(static_cast<std::size_t>(cls)); }
  ClassCounts& operator[](int cls) { return classes.at(static_cast<std::size_t>(cls)); }

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    for (std::size_t c = 0; c < classes.size(); ++c) {
      classes[c].tp += o.classes[c].tp;
      classes[c].fp += o.classes[c].fp;
      classes[c].fn += o.classes[c].fn;
      classes[c].tn += o.classes[c].tn;
    }
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts confusion(const LabelMask& pred, const LabelMask& truth) {
  require_same_shape(pred, truth, "confusion");
  // joint histogram, then one-vs-rest counts per class
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> joint{};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto p = pred.data()[i], t = truth.data()[i];
    if (p >= kNumClasses || t >= kNumClasses) throw DataError("confusion: mask value outside 0..7");
    ++joint[p][t];
  }
  const std::uint64_t total = pred.size();
  ConfusionCounts out;
  for (int c = 0; c < kNumClasses; ++c) {
    std::uint64_t pred_c = 0, truth_c = 0;
    for (int k = 0; k < kNumClasses; ++k) {
      pred_c += joint[c][k];
      truth_c += joint[k][c];
    }
    auto& cc = out[c];
    cc.tp = joint[c][c];
    cc.fp = pred_c - cc.tp;
    cc.fn = truth_c - cc.tp;
    cc.tn = total - cc.tp - cc.fp - cc.fn;
  }
  return out;
}

inline ConfusionCounts confusion(const std::vector<LabelMask>& pred, const std::vector<LabelMask>& truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("confusion: " + std::to_string(pred.size()) + " predicted vs " +
                     std::to_string(truth.size()) + " ground-truth masks");
  }
  ConfusionCounts out;
  for (std::size_t i = 0; i < pred.size(); ++i) out += confusion(pred[i], truth[i]);
  return out;
}

/// TP / (TP + FP + FN); NaN when the union is empty.
inline double iou(const ConfusionCounts& counts, int cls) {
  const auto& c = counts[cls];
  const auto uni = c.tp + c.fp + c.fn;
  return uni ? static_cast<double>(c.tp) / static_cast<double>(uni) : std::numeric_limits<double>::quiet_NaN();
}

/// Mean over vertebra classes with a non-empty union; 1.0 when every union is empty.
inline double mean_iou(const ConfusionCounts& counts) {
  double sum = 0.0;
  int n = 0;
  for (int c = 1; c < kNumClasses; ++c) {
    const double v = iou(counts, c);
    if (std::isnan(v)) continue;
    sum += v;
    ++n;
  }
  return n ? sum / n : 1.0;
}

/// (TN + TP) / (TN + TP + FP + FN).
inline double class_accuracy(const ConfusionCounts& counts, int cls) {
  const auto& c = counts[cls];
  const auto total = c.total();
  return total ? static_cast<double>(c.tn + c.tp) / static_cast<double>(total) : 1.0;
}

inline double mean_class_accuracy(const ConfusionCounts& counts) {
  double sum = 0.0;
  for (int c = 1; c < kNumClasses; ++c) sum += class_accuracy(counts, c);
  return sum / kNumVertebraClasses;
}

/// 2TP / (2TP + FP + FN); 1.0 when both sets are empty.
inline double dice_from_counts(const ClassCounts& c) {
  const auto denom = 2 * c.tp + c.fp + c.fn;
  return denom ? 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom) : 1.0;
}

inline double dice(const ConfusionCounts& counts, int cls) { return dice_from_counts(counts[cls]); }

/// Mean Dice over vertebra classes occurring in prediction or truth; 1.0 if none does.
inline double mean_dice(const ConfusionCounts& counts) {
  double sum = 0.0;
  int n = 0;
  for (int c = 1; c < kNumClasses; ++c) {
    const auto& cc = counts[c];
    if (cc.tp + cc.fp + cc.fn == 0) continue;
    sum += dice_from_counts(cc);
    ++n;
  }
  return n ? sum / n : 1.0;
}

/// Binary Dice, 2|X n Y| / (|X| + |Y|); non-zero pixels are foreground.
template <typename A, typename B>
double dice(const Grid<A>& pred, const Grid<B>& truth) {
  require_same_shape(pred, truth, "dice");
  std::uint64_t both = 0, np = 0, nt = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data()[i] != A{};
    const bool t = truth.data()[i] != B{};
    both += p && t;
    np += p;
    nt += t;
  }
  return np + nt ? 2.0 * static_cast<double>(both) / static_cast<double>(np + nt) : 1.0;
}

/// Fraction of pixels whose class is exactly right.
inline double pixel_accuracy(const ConfusionCounts& counts) {
  std::uint64_t correct = 0, total = counts[0].total();
  for (int c = 0; c < kNumClasses; ++c) correct += counts[c].tp;
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 1.0;
}

/// Whole-vertebra detection tally: a vertebra present in a slice's ground truth counts
/// as detected when its per-slice IoU reaches `threshold`.
struct DetectionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 1.0; }
  double precision() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 1.0; }
  friend bool operator==(const DetectionCounts&, const DetectionCounts&) = default;
};

inline DetectionCounts detect_objects(const std::vector<LabelMask>& pred, const std::vector<LabelMask>& truth,
                                      double threshold = 0.5) {
  if (pred.size() != truth.size()) throw ShapeError("detect_objects: mask count mismatch");
  DetectionCounts out;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    const auto cc = confusion(pred[s], truth[s]);
    for (int c = 1; c < kNumClasses; ++c) {
      const bool in_truth = cc[c].tp + cc[c].fn > 0;
      const bool in_pred = cc[c].tp + cc[c].fp > 0;
      if (in_truth) {
        if (iou(cc, c) >= threshold) ++out.tp; else ++out.fn;
      } else if (in_pred) {
        ++out.fp;
      }
    }
  }
  return out;
}

}  // namespace spineseg
