#pragma once

// Multi-label mask synthesis from sparse centroid + corner annotations.
//
// Annotations on acquired slices are carried onto the generated in-between slices by
// linear interpolation along the slice axis. On each slice, a vertebra's bounding box is
// taken from its two corners and the vertebra itself is the 4-connected bright region
// inside that box that is closest to the centroid. Its pixels receive the class code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "spineseg/dataio.hpp"
#include "spineseg/error.hpp"
#include "spineseg/grid.hpp"
#include "spineseg/labels.hpp"
#include "spineseg/volume.hpp"

namespace spineseg {

struct MaskgenConfig {
  /// Pixels at or below this normalized intensity are never part of a vertebra.
  double black_threshold = 0.02;
  /// Height/width ratios outside this range raise a plausibility warning.
  double min_plausible_hw_ratio = 0.3;
  double max_plausible_hw_ratio = 3.0;
};

struct BoundingBox {
  long row_min = 0;
  long col_min = 0;
  long row_max = -1;
  long col_max = -1;

  bool empty() const noexcept { return row_max < row_min || col_max < col_min; }
  bool contains(long r, long c) const noexcept {
    return r >= row_min && r <= row_max && c >= col_min && c <= col_max;
  }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct VertebraGeometry {
  VertebraLabel label = VertebraLabel::L1;
  double diameter_px = 0.0;
  double height_px = 0.0;
  double width_px = 0.0;
  double hw_ratio = 0.0;
  /// Painted pixel count; zero until the vertebra has been painted.
  double area_px2 = 0.0;
  BoundingBox bbox;
};

struct PixelCoord {
  long row = 0;
  long col = 0;
  friend auto operator<=>(const PixelCoord&, const PixelCoord&) = default;
};

/// Linear blend of two annotations of the same vertebra at an intermediate slice.
inline VertebraAnnotation interpolate_centroids(const VertebraAnnotation& prev,
                                                const VertebraAnnotation& next,
                                                int target_index) {
  if (prev.label != next.label) throw DataError("interpolate_centroids: labels differ");
  if (!(prev.slice_index < target_index && target_index < next.slice_index)) {
    throw DataError("interpolate_centroids: target slice " + std::to_string(target_index) +
                    " outside (" + std::to_string(prev.slice_index) + ", " +
                    std::to_string(next.slice_index) + ")");
  }
  const double t = static_cast<double>(target_index - prev.slice_index) /
                   static_cast<double>(next.slice_index - prev.slice_index);
  VertebraAnnotation out;
  out.slice_index = target_index;
  out.label = prev.label;
  out.centroid = lerp(prev.centroid, next.centroid, t);
  out.corner_a = lerp(prev.corner_a, next.corner_a, t);
  out.corner_b = lerp(prev.corner_b, next.corner_b, t);
  return out;
}

/// Adds interpolated annotations on every slice strictly between two consecutive
/// annotated slices of the same vertebra. Slices outside a vertebra's annotated range
/// get nothing for it.
inline AnnotationSet fill_annotation_gaps(const AnnotationSet& set, int total_slices) {
  AnnotationSet out = set;
  for (const auto& a : set.annotations()) {
    if (a.slice_index < 0 || a.slice_index >= total_slices) {
      throw DataError("annotation slice " + std::to_string(a.slice_index) +
                      " outside stack of " + std::to_string(total_slices));
    }
  }
  for (auto label : kAllLabels) {
    const auto track = set.for_label(label);
    for (std::size_t i = 0; i + 1 < track.size(); ++i) {
      for (int s = track[i].slice_index + 1; s < track[i + 1].slice_index; ++s) {
        out.add(interpolate_centroids(track[i], track[i + 1], s));
      }
    }
  }
  return out;
}

inline VertebraGeometry derive_geometry(const VertebraAnnotation& ann, Shape2D slice_shape) {
  validate_annotation(ann);
  VertebraGeometry g;
  g.label = ann.label;
  g.height_px = std::abs(ann.corner_a.row - ann.corner_b.row);
  g.width_px = std::abs(ann.corner_a.col - ann.corner_b.col);
  if (g.width_px == 0.0) {
    throw DataError("derive_geometry: zero width for " + std::string(label_name(ann.label)));
  }
  g.hw_ratio = g.height_px / g.width_px;
  g.diameter_px = distance(ann.corner_a, ann.corner_b);

  const long max_row = static_cast<long>(slice_shape.rows) - 1;
  const long max_col = static_cast<long>(slice_shape.cols) - 1;
  auto clamp = [](double v, long hi) { return std::clamp(static_cast<long>(v), 0L, hi); };
  g.bbox.row_min = clamp(std::floor(std::min(ann.corner_a.row, ann.corner_b.row)), max_row);
  g.bbox.row_max = clamp(std::ceil(std::max(ann.corner_a.row, ann.corner_b.row)), max_row);
  g.bbox.col_min = clamp(std::floor(std::min(ann.corner_a.col, ann.corner_b.col)), max_col);
  g.bbox.col_max = clamp(std::ceil(std::max(ann.corner_a.col, ann.corner_b.col)), max_col);
  return g;
}

/// 4-connected region of above-threshold pixels inside the bounding box, grown from the
/// above-threshold pixel nearest the centroid. Sorted row-major; empty when the box holds
/// no bright pixel.
inline std::vector<PixelCoord> trace_vertebra_pixels(const Image& slice,
                                                     const VertebraGeometry& geom,
                                                     const Point& centroid,
                                                     double black_threshold = 0.02) {
  const BoundingBox& box = geom.bbox;
  if (box.empty()) return {};
  if (box.row_min < 0 || box.col_min < 0 || box.row_max >= static_cast<long>(slice.rows()) ||
      box.col_max >= static_cast<long>(slice.cols())) {
    throw DataError("trace_vertebra_pixels: bounding box outside raster");
  }
  auto bright = [&](long r, long c) { return slice(r, c) > black_threshold; };

  PixelCoord seed{};
  double best = std::numeric_limits<double>::infinity();
  for (long r = box.row_min; r <= box.row_max; ++r) {
    for (long c = box.col_min; c <= box.col_max; ++c) {
      if (!bright(r, c)) continue;
      const double d = std::hypot(r - centroid.row, c - centroid.col);
      if (d < best) {
        best = d;
        seed = {r, c};
      }
    }
  }
  if (!std::isfinite(best)) return {};

  const long box_cols = box.col_max - box.col_min + 1;
  const long box_rows = box.row_max - box.row_min + 1;
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(box_rows * box_cols), 0);
  auto mark = [&](const PixelCoord& p) -> std::uint8_t& {
    return seen[static_cast<std::size_t>((p.row - box.row_min) * box_cols + (p.col - box.col_min))];
  };

  std::vector<PixelCoord> region;
  std::deque<PixelCoord> queue{seed};
  mark(seed) = 1;
  while (!queue.empty()) {
    const PixelCoord p = queue.front();
    queue.pop_front();
    region.push_back(p);
    const PixelCoord nbrs[4] = {{p.row - 1, p.col}, {p.row + 1, p.col}, {p.row, p.col - 1}, {p.row, p.col + 1}};
    for (const auto& q : nbrs) {
      if (!box.contains(q.row, q.col) || mark(q) || !bright(q.row, q.col)) continue;
      mark(q) = 1;
      queue.push_back(q);
    }
  }
  std::sort(region.begin(), region.end());
  return region;
}

struct PaintResult {
  LabelMask mask;
  /// One entry per annotation, ordered by class code, with area filled in.
  std::vector<VertebraGeometry> geometry;
  std::vector<std::string> warnings;
};

/// Paints every annotated vertebra of one slice. Pixels claimed by more than one vertebra
/// go to the nearest centroid; exact ties go to the lower class code.
inline PaintResult paint_mask_detailed(const Image& slice, std::vector<VertebraAnnotation> anns,
                                       const MaskgenConfig& cfg = {}) {
  std::sort(anns.begin(), anns.end(), [](const auto& a, const auto& b) {
    return class_code(a.label) < class_code(b.label);
  });
  for (std::size_t i = 1; i < anns.size(); ++i) {
    if (anns[i].label == anns[i - 1].label) {
      throw DataError("paint_mask: two annotations for " + std::string(label_name(anns[i].label)));
    }
  }

  PaintResult out;
  out.mask = LabelMask(slice.rows(), slice.cols(), 0);
  // Winning annotation index per pixel; -1 = unclaimed.
  Grid<int> owner(slice.rows(), slice.cols(), -1);

  for (std::size_t i = 0; i < anns.size(); ++i) {
    const auto& ann = anns[i];
    auto geom = derive_geometry(ann, shape_of(slice));
    if (geom.hw_ratio < cfg.min_plausible_hw_ratio || geom.hw_ratio > cfg.max_plausible_hw_ratio) {
      out.warnings.push_back("slice " + std::to_string(ann.slice_index) + " " +
                             std::string(label_name(ann.label)) + ": implausible height/width ratio " +
                             std::to_string(geom.hw_ratio));
    }
    for (const auto& p : trace_vertebra_pixels(slice, geom, ann.centroid, cfg.black_threshold)) {
      int& cur = owner(static_cast<std::size_t>(p.row), static_cast<std::size_t>(p.col));
      if (cur < 0) {
        cur = static_cast<int>(i);
        continue;
      }
      const auto& other = anns[static_cast<std::size_t>(cur)];
      const double d_new = std::hypot(p.row - ann.centroid.row, p.col - ann.centroid.col);
      const double d_old = std::hypot(p.row - other.centroid.row, p.col - other.centroid.col);
      // anns is sorted by class code, so on a tie the earlier (lower) code keeps the pixel
      if (d_new < d_old) cur = static_cast<int>(i);
    }
    out.geometry.push_back(geom);
  }

  for (std::size_t k = 0; k < owner.size(); ++k) {
    const int o = owner.data()[k];
    if (o < 0) continue;
    out.mask.data()[k] = class_code(anns[static_cast<std::size_t>(o)].label);
    out.geometry[static_cast<std::size_t>(o)].area_px2 += 1.0;
  }
  return out;
}

inline LabelMask paint_mask(const Image& slice, const std::vector<VertebraAnnotation>& anns,
                            const MaskgenConfig& cfg = {}) {
  return paint_mask_detailed(slice, anns, cfg).mask;
}

/// Output of the full masking pipeline on one stack.
struct MaskSet {
  SliceStack slices;          // resampled stack
  AnnotationSet annotations;  // original + interpolated, indexed into `slices`
  std::vector<LabelMask> masks;
  std::vector<std::string> warnings;
};

/// Resamples the stack to `target_gap_px`, carries annotations to the new slice indices,
/// fills the gaps between annotated slices, and paints one mask per slice.
/// `trace_filter`, when set, is applied to each slice before tracing (e.g. a denoiser);
/// the stored slices stay unfiltered.
inline MaskSet build_masks(const SliceStack& stack, const AnnotationSet& annotations,
                           int target_gap_px = 1, const MaskgenConfig& cfg = {},
                           const std::function<Image(const Image&)>& trace_filter = {}) {
  MaskSet out;
  AnnotationSet remapped;
  if (stack.size() >= 2) {
    const auto vol = reconstruct_volume(stack, target_gap_px);
    out.slices = volume_as_stack(vol);
    const int ratio = stack.slice_gap_px / target_gap_px;
    for (auto a : annotations.annotations()) {
      if (a.slice_index < 0 || static_cast<std::size_t>(a.slice_index) >= stack.size()) {
        throw DataError("annotation slice index out of range: " + std::to_string(a.slice_index));
      }
      a.slice_index *= ratio;
      remapped.add(a);
    }
  } else {
    stack.validate();
    out.slices = stack;
    remapped = annotations;
  }
  out.annotations = fill_annotation_gaps(remapped, static_cast<int>(out.slices.size()));

  for (std::size_t s = 0; s < out.slices.size(); ++s) {
    const Image& slice = out.slices.slices[s];
    const auto anns = out.annotations.on_slice(static_cast<int>(s));
    auto painted = trace_filter ? paint_mask_detailed(trace_filter(slice), anns, cfg)
                                : paint_mask_detailed(slice, anns, cfg);
    out.masks.push_back(std::move(painted.mask));
    for (auto& w : painted.warnings) out.warnings.push_back(std::move(w));
  }
  return out;
}

}  // namespace spineseg
