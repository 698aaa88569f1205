#pragma once

// Dataset ingestion: slice directories, annotation files, mask files, and the
// synthetic spine phantom used in place of clinical scans.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "spineseg/error.hpp"
#include "spineseg/grid.hpp"
#include "spineseg/labels.hpp"
#include "spineseg/png_io.hpp"

namespace spineseg {

namespace fs = std::filesystem;

inline constexpr int kDefaultPixelPerMm = 4;

/// Ordered sagittal slices sharing one raster shape.
struct SliceStack {
  std::vector<Image> slices;
  int slice_gap_px = 1;
  int pixel_per_mm = kDefaultPixelPerMm;

  std::size_t size() const noexcept { return slices.size(); }
  Shape2D slice_shape() const { return slices.empty() ? Shape2D{} : shape_of(slices.front()); }

  /// Throws DataError/ShapeError when an invariant does not hold.
  void validate() const {
    if (slices.empty()) throw DataError("slice stack is empty");
    if (slice_gap_px < 1) throw DataError("slice_gap_px must be >= 1");
    if (pixel_per_mm < 1) throw DataError("pixel_per_mm must be >= 1");
    for (const auto& s : slices) {
      require_same_shape(s, slices.front(), "slice stack");
      for (double v : s.values()) {
        if (!(v >= 0.0 && v <= 1.0)) throw DataError("slice intensity outside [0,1]");
      }
    }
  }

  friend bool operator==(const SliceStack&, const SliceStack&) = default;
};

struct Point {
  double row = 0.0;
  double col = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

inline Point lerp(const Point& a, const Point& b, double t) {
  return {a.row + t * (b.row - a.row), a.col + t * (b.col - a.col)};
}

inline double distance(const Point& a, const Point& b) {
  return std::hypot(a.row - b.row, a.col - b.col);
}

struct VertebraAnnotation {
  int slice_index = 0;
  VertebraLabel label = VertebraLabel::L1;
  Point centroid;
  Point corner_a;
  Point corner_b;

  friend bool operator==(const VertebraAnnotation&, const VertebraAnnotation&) = default;
};

/// Checks the corner/centroid invariants of a single annotation.
inline void validate_annotation(const VertebraAnnotation& a) {
  if (a.corner_a == a.corner_b) throw DataError("annotation corners coincide");
  constexpr double tol = 0.5;
  const double r0 = std::min(a.corner_a.row, a.corner_b.row) - tol;
  const double r1 = std::max(a.corner_a.row, a.corner_b.row) + tol;
  const double c0 = std::min(a.corner_a.col, a.corner_b.col) - tol;
  const double c1 = std::max(a.corner_a.col, a.corner_b.col) + tol;
  if (a.centroid.row < r0 || a.centroid.row > r1 || a.centroid.col < c0 || a.centroid.col > c1) {
    throw DataError("annotation centroid outside its corner rectangle (slice " +
                    std::to_string(a.slice_index) + ", " + std::string(label_name(a.label)) + ")");
  }
}

/// Sparse per-slice vertebra annotations, at most one per (slice, label).
class AnnotationSet {
 public:
  AnnotationSet() = default;

  void add(const VertebraAnnotation& ann) {
    validate_annotation(ann);
    auto pos = std::lower_bound(items_.begin(), items_.end(), ann, less);
    if (pos != items_.end() && key(*pos) == key(ann)) {
      throw DataError("duplicate annotation for slice " + std::to_string(ann.slice_index) +
                      " label " + std::string(label_name(ann.label)));
    }
    items_.insert(pos, ann);
  }

  /// Sorted by (slice_index, class code).
  const std::vector<VertebraAnnotation>& annotations() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }

  std::vector<int> annotated_slice_indices() const {
    std::vector<int> out;
    for (const auto& a : items_) {
      if (out.empty() || out.back() != a.slice_index) out.push_back(a.slice_index);
    }
    return out;
  }

  std::vector<VertebraAnnotation> on_slice(int slice_index) const {
    std::vector<VertebraAnnotation> out;
    for (const auto& a : items_) {
      if (a.slice_index == slice_index) out.push_back(a);
    }
    return out;
  }

  /// Annotations of one vertebra, ordered by slice.
  std::vector<VertebraAnnotation> for_label(VertebraLabel label) const {
    std::vector<VertebraAnnotation> out;
    for (const auto& a : items_) {
      if (a.label == label) out.push_back(a);
    }
    return out;
  }

  friend bool operator==(const AnnotationSet&, const AnnotationSet&) = default;

 private:
  static std::tuple<int, int> key(const VertebraAnnotation& a) {
    return {a.slice_index, class_code(a.label)};
  }
  static bool less(const VertebraAnnotation& a, const VertebraAnnotation& b) {
    return key(a) < key(b);
  }

  std::vector<VertebraAnnotation> items_;
};

// ---------------------------------------------------------------------------
// Slice directories

namespace detail {

inline bool parse_slice_number(const fs::path& p, long& number) {
  if (p.extension() != ".png") return false;
  const std::string stem = p.stem().string();
  if (stem.empty() || !std::all_of(stem.begin(), stem.end(), [](char c) { return c >= '0' && c <= '9'; })) {
    return false;
  }
  auto [ptr, ec] = std::from_chars(stem.data(), stem.data() + stem.size(), number);
  return ec == std::errc{} && ptr == stem.data() + stem.size();
}

inline std::string slice_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04zu.png", index);
  return buf;
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("write failed for " + path.string());
}

/// Numerically sorted `NNNN.png` files in a directory.
inline std::vector<fs::path> numbered_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::pair<long, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    long n = 0;
    if (entry.is_regular_file() && parse_slice_number(entry.path(), n)) {
      found.emplace_back(n, entry.path());
    }
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [n, p] : found) out.push_back(std::move(p));
  return out;
}

}  // namespace detail

inline Image read_slice_png(const fs::path& path) {
  const auto raw = png::read_gray(path);
  const double scale = raw.bit_depth == 16 ? 65535.0 : 255.0;
  Image img(raw.rows, raw.cols);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) img.data()[i] = raw.pixels[i] / scale;
  return img;
}

/// Writes a slice as a 16-bit grayscale PNG, values clipped to [0,1].
inline void write_slice_png(const Image& img, const fs::path& path) {
  std::vector<std::uint16_t> px(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::clamp(img.data()[i], 0.0, 1.0);
    px[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0));
  }
  png::write_gray16(path, img.rows(), img.cols(), px);
}

/// Loads `NNNN.png` slices (sorted numerically) plus `meta.json` from a directory.
inline SliceStack load_slice_stack(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.json";
  if (!fs::exists(meta_path)) throw DataError("missing metadata file " + meta_path.string());
  const auto meta = detail::read_json(meta_path);
  SliceStack stack;
  try {
    stack.slice_gap_px = meta.at("slice_gap_px").get<int>();
    stack.pixel_per_mm = meta.value("pixel_per_mm", kDefaultPixelPerMm);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad metadata in " + meta_path.string() + ": " + e.what());
  }
  for (const auto& p : detail::numbered_pngs(dir)) stack.slices.push_back(read_slice_png(p));
  if (stack.slices.empty()) throw DataError("no slices found in " + dir.string());
  stack.validate();
  return stack;
}

inline void save_slice_stack(const SliceStack& stack, const fs::path& dir) {
  stack.validate();
  fs::create_directories(dir);
  for (std::size_t i = 0; i < stack.size(); ++i) {
    write_slice_png(stack.slices[i], dir / detail::slice_file_name(i));
  }
  nlohmann::ordered_json meta;
  meta["slice_gap_px"] = stack.slice_gap_px;
  meta["pixel_per_mm"] = stack.pixel_per_mm;
  detail::write_text(dir / "meta.json", meta.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Annotation files

namespace detail {

inline Point parse_point(const nlohmann::json& j, const char* field) {
  const auto& v = j.at(field);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw DataError(std::string("field '") + field + "' must be [row, col]");
  }
  return {v[0].get<double>(), v[1].get<double>()};
}

}  // namespace detail

/// Parses an annotation array. When `slice_count` is given, indices must lie in [0, slice_count).
inline AnnotationSet parse_annotations(const nlohmann::json& doc,
                                       std::optional<std::size_t> slice_count = std::nullopt) {
  if (!doc.is_array()) throw DataError("annotation file must hold a JSON array");
  AnnotationSet set;
  std::size_t record = 0;
  for (const auto& item : doc) {
    try {
      VertebraAnnotation a;
      if (!item.at("slice").is_number_integer()) throw DataError("'slice' must be an integer");
      a.slice_index = item.at("slice").get<int>();
      const auto name = item.at("label").get<std::string>();
      const auto label = parse_label(name);
      if (!label) throw DataError("unknown label '" + name + "'");
      a.label = *label;
      a.centroid = detail::parse_point(item, "centroid");
      a.corner_a = detail::parse_point(item, "corner_a");
      a.corner_b = detail::parse_point(item, "corner_b");
      if (a.slice_index < 0 ||
          (slice_count && static_cast<std::size_t>(a.slice_index) >= *slice_count)) {
        throw DataError("slice index " + std::to_string(a.slice_index) + " out of range");
      }
      set.add(a);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed annotation record " + std::to_string(record) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("annotation record " + std::to_string(record) + ": " + e.what());
    }
    ++record;
  }
  return set;
}

inline AnnotationSet load_annotations(const fs::path& path,
                                      std::optional<std::size_t> slice_count = std::nullopt) {
  return parse_annotations(detail::read_json(path), slice_count);
}

inline nlohmann::ordered_json annotations_to_json(const AnnotationSet& set) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& a : set.annotations()) {
    nlohmann::ordered_json j;
    j["slice"] = a.slice_index;
    j["label"] = std::string(label_name(a.label));
    j["centroid"] = {a.centroid.row, a.centroid.col};
    j["corner_a"] = {a.corner_a.row, a.corner_a.col};
    j["corner_b"] = {a.corner_b.row, a.corner_b.col};
    arr.push_back(std::move(j));
  }
  return arr;
}

inline void save_annotations(const AnnotationSet& set, const fs::path& path) {
  detail::write_text(path, annotations_to_json(set).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Mask files

inline void check_mask_values(const LabelMask& mask) {
  for (auto v : mask.values()) {
    if (v > kNumVertebraClasses) {
      throw DataError("mask value " + std::to_string(v) + " outside 0..7");
    }
  }
}

/// 8-bit grayscale PNG whose pixel values are the raw class codes.
inline void write_mask(const LabelMask& mask, const fs::path& path) {
  check_mask_values(mask);
  std::vector<std::uint8_t> px(mask.values().begin(), mask.values().end());
  png::write_gray8(path, mask.rows(), mask.cols(), px);
}

inline LabelMask read_mask(const fs::path& path) {
  const auto raw = png::read_gray(path);
  if (raw.bit_depth != 8) throw DataError("mask file must be 8-bit: " + path.string());
  LabelMask mask(raw.rows, raw.cols);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
    mask.data()[i] = static_cast<std::uint8_t>(raw.pixels[i]);
  }
  check_mask_values(mask);
  return mask;
}

inline void save_mask_dir(const std::vector<LabelMask>& masks, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    write_mask(masks[i], dir / detail::slice_file_name(i));
  }
}

inline std::vector<LabelMask> load_mask_dir(const fs::path& dir) {
  std::vector<LabelMask> out;
  for (const auto& p : detail::numbered_pngs(dir)) out.push_back(read_mask(p));
  if (out.empty()) throw DataError("no mask files found in " + dir.string());
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic phantom

struct PhantomConfig {
  int n_slices = 9;
  int height = 256;
  int width = 256;
  int n_vertebrae = 5;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
  int slice_gap_px = 12;  // 3 mm at 4 px/mm
  int pixel_per_mm = kDefaultPixelPerMm;

  void validate() const {
    if (n_slices < 1) throw ConfigError("phantom: n_slices must be >= 1");
    if (height < 8 || width < 8) throw ConfigError("phantom: raster too small");
    if (n_vertebrae < 1 || n_vertebrae > kNumVertebraClasses) {
      throw ConfigError("phantom: n_vertebrae must be in 1..7");
    }
    if (!(noise_sigma >= 0.0)) throw ConfigError("phantom: noise_sigma must be >= 0");
    if (slice_gap_px < 1) throw ConfigError("phantom: slice_gap_px must be >= 1");
  }
};

struct Phantom {
  SliceStack stack;
  AnnotationSet annotations;
  std::vector<LabelMask> truth;
};

/// Labels used for a phantom with `n` vertebrae: the `n` most caudal in anatomical order.
inline std::vector<VertebraLabel> phantom_labels(int n) {
  return {kAnatomicalOrder.end() - n, kAnatomicalOrder.end()};
}

/// Stack of slices with `n_vertebrae` bright ellipses stacked top to bottom on a black
/// background. Each ellipse drifts vertically across slices and narrows towards the first
/// and last slice. Annotations carry the exact centre and bounding corners of each ellipse.
inline Phantom generate_phantom(const PhantomConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  auto uniform = [&rng](double lo, double hi) {
    return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
  };

  struct Blob {
    VertebraLabel label;
    double row, col, semi_rows, semi_cols, drift, intensity;
  };
  const auto labels = phantom_labels(cfg.n_vertebrae);
  const double H = cfg.height;
  const double W = cfg.width;
  const double margin = 0.08 * H;
  const double pitch = (H - 2.0 * margin) / cfg.n_vertebrae;
  const double global_drift = uniform(-0.04, 0.04) * H;
  const double spine_col = W * (0.5 + uniform(-0.04, 0.04));

  std::vector<Blob> blobs;
  for (int k = 0; k < cfg.n_vertebrae; ++k) {
    Blob b;
    b.label = labels[static_cast<std::size_t>(k)];
    b.semi_rows = pitch * uniform(0.27, 0.33);
    b.semi_cols = std::min(b.semi_rows * uniform(1.3, 1.7), 0.4 * W);
    b.row = margin + pitch * (k + 0.5) + uniform(-0.03, 0.03) * pitch;
    b.col = spine_col + uniform(-0.02, 0.02) * W;
    b.drift = global_drift + uniform(-0.05, 0.05) * pitch;
    b.intensity = uniform(0.65, 0.95);
    blobs.push_back(b);
  }

  Phantom out;
  out.stack.slice_gap_px = cfg.slice_gap_px;
  out.stack.pixel_per_mm = cfg.pixel_per_mm;
  std::normal_distribution<double> noise(0.0, cfg.noise_sigma > 0 ? cfg.noise_sigma : 1.0);

  for (int s = 0; s < cfg.n_slices; ++s) {
    // position across the stack in [-0.5, 0.5]
    const double t = cfg.n_slices > 1 ? static_cast<double>(s) / (cfg.n_slices - 1) - 0.5 : 0.0;
    const double shrink_rows = 1.0 - 0.15 * (2 * t) * (2 * t);
    const double shrink_cols = 1.0 - 0.10 * (2 * t) * (2 * t);
    Image slice(cfg.height, cfg.width, 0.0);
    LabelMask truth(cfg.height, cfg.width, 0);

    long prev_bottom = -2;
    for (const auto& b : blobs) {
      const double r = b.row + b.drift * t;
      const double c = b.col;
      const double a = b.semi_rows * shrink_rows;
      const double w = b.semi_cols * shrink_cols;
      const long top = static_cast<long>(std::floor(r - a));
      const long bottom = static_cast<long>(std::ceil(r + a));
      const long left = static_cast<long>(std::floor(c - w));
      const long right = static_cast<long>(std::ceil(c + w));
      if (top < 0 || left < 0 || bottom >= cfg.height || right >= cfg.width) {
        throw ConfigError("phantom: vertebra exceeds raster bounds for requested geometry");
      }
      if (top <= prev_bottom + 1) {
        throw ConfigError("phantom: vertebrae would overlap for requested geometry");
      }
      prev_bottom = bottom;
      for (long i = top; i <= bottom; ++i) {
        for (long j = left; j <= right; ++j) {
          const double dr = (i - r) / a;
          const double dc = (j - c) / w;
          if (dr * dr + dc * dc <= 1.0) {
            slice(i, j) = b.intensity;
            truth(i, j) = class_code(b.label);
          }
        }
      }
      VertebraAnnotation ann;
      ann.slice_index = s;
      ann.label = b.label;
      ann.centroid = {r, c};
      ann.corner_a = {r - a, c - w};
      ann.corner_b = {r + a, c + w};
      out.annotations.add(ann);
    }

    if (cfg.noise_sigma > 0) {
      for (auto& v : slice.values()) v = std::clamp(v + noise(rng), 0.0, 1.0);
    }
    out.stack.slices.push_back(std::move(slice));
    out.truth.push_back(std::move(truth));
  }
  return out;
}

/// Writes a phantom as `NNNN.png` + `meta.json` + `annotations.json`, with ground truth
/// masks under `truth/`.
inline void save_phantom(const Phantom& ph, const fs::path& dir) {
  save_slice_stack(ph.stack, dir);
  save_annotations(ph.annotations, dir / "annotations.json");
  save_mask_dir(ph.truth, dir / "truth");
}

}  // namespace spineseg
