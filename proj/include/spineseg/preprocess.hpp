#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spineseg/error.hpp"
#include "spineseg/grid.hpp"

namespace spineseg {

enum class Denoiser { none, gaussian, median };

inline std::string_view denoiser_name(Denoiser d) noexcept {
  switch (d) {
    case Denoiser::none: return "none";
    case Denoiser::gaussian: return "gaussian";
    case Denoiser::median: return "median";
  }
  return "?";
}

inline Denoiser parse_denoiser(std::string_view name) {
  if (name == "none") return Denoiser::none;
  if (name == "gaussian") return Denoiser::gaussian;
  if (name == "median") return Denoiser::median;
  throw ConfigError("unknown denoiser '" + std::string(name) + "'");
}

/// Inclusive pixel rectangle.
struct CropRect {
  std::size_t row_min = 0;
  std::size_t col_min = 0;
  std::size_t row_max = 0;
  std::size_t col_max = 0;
  friend bool operator==(const CropRect&, const CropRect&) = default;
};

struct PreprocessConfig {
  Denoiser denoiser = Denoiser::none;
  /// Gaussian: standard deviation in pixels. Median: window side (rounded up to odd).
  double denoise_strength = 1.0;
  int target_size = 256;
  std::optional<CropRect> crop;

  void validate() const {
    if (target_size < 32 || target_size % 32 != 0) {
      throw ConfigError("preprocess.target_size must be a multiple of 32 and >= 32");
    }
    if (!(denoise_strength >= 0.0)) throw ConfigError("preprocess.denoise_strength must be >= 0");
  }

  friend bool operator==(const PreprocessConfig&, const PreprocessConfig&) = default;
};

namespace detail {

/// Mirror index into [0, n): -1 -> 0, n -> n-1.
inline long reflect(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

inline Image gaussian_blur(const Image& src, double sigma) {
  if (sigma <= 0.0) return src;
  const long radius = std::max(1L, static_cast<long>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long k = -radius; k <= radius; ++k) {
    const double w = std::exp(-0.5 * (k * k) / (sigma * sigma));
    kernel[static_cast<std::size_t>(k + radius)] = w;
    total += w;
  }
  for (auto& w : kernel) w /= total;

  const long rows = static_cast<long>(src.rows());
  const long cols = static_cast<long>(src.cols());
  Image tmp(src.rows(), src.cols());
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * src(r, reflect(c + k, cols));
      }
      tmp(r, c) = acc;
    }
  }
  Image out(src.rows(), src.cols());
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp(reflect(r + k, rows), c);
      }
      out(r, c) = acc;
    }
  }
  return out;
}

inline Image median_filter(const Image& src, double strength) {
  long side = std::max(1L, static_cast<long>(std::ceil(strength)));
  if (side % 2 == 0) ++side;
  const long radius = side / 2;
  if (radius == 0) return src;
  const long rows = static_cast<long>(src.rows());
  const long cols = static_cast<long>(src.cols());
  Image out(src.rows(), src.cols());
  std::vector<double> window;
  window.reserve(static_cast<std::size_t>(side * side));
  for (long r = 0; r < rows; ++r) {
    for (long c = 0; c < cols; ++c) {
      window.clear();
      for (long dr = -radius; dr <= radius; ++dr) {
        for (long dc = -radius; dc <= radius; ++dc) {
          window.push_back(src(reflect(r + dr, rows), reflect(c + dc, cols)));
        }
      }
      auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
      std::nth_element(window.begin(), mid, window.end());
      out(r, c) = *mid;
    }
  }
  return out;
}

}  // namespace detail

/// Reflect-padded denoising; output clipped to [0,1].
inline Image denoise(const Image& slice, const PreprocessConfig& cfg) {
  Image out;
  switch (cfg.denoiser) {
    case Denoiser::none: return slice;
    case Denoiser::gaussian: out = detail::gaussian_blur(slice, cfg.denoise_strength); break;
    case Denoiser::median: out = detail::median_filter(slice, cfg.denoise_strength); break;
  }
  for (auto& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

template <typename T>
Grid<T> crop(const Grid<T>& src, const CropRect& rect) {
  if (rect.row_max < rect.row_min || rect.col_max < rect.col_min || rect.row_max >= src.rows() ||
      rect.col_max >= src.cols()) {
    throw DataError("crop rectangle outside slice bounds");
  }
  Grid<T> out(rect.row_max - rect.row_min + 1, rect.col_max - rect.col_min + 1);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) = src(rect.row_min + r, rect.col_min + c);
  }
  return out;
}

/// Half-pixel-centre bilinear resampling with edge clamping.
inline Image resize_bilinear(const Image& src, std::size_t rows, std::size_t cols) {
  if (src.empty()) throw DataError("cannot resize an empty slice");
  Image out(rows, cols);
  const double sy = static_cast<double>(src.rows()) / rows;
  const double sx = static_cast<double>(src.cols()) / cols;
  const long max_r = static_cast<long>(src.rows()) - 1;
  const long max_c = static_cast<long>(src.cols()) - 1;
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, static_cast<double>(max_r));
    const long y0 = static_cast<long>(std::floor(y));
    const long y1 = std::min(y0 + 1, max_r);
    const double fy = y - y0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, static_cast<double>(max_c));
      const long x0 = static_cast<long>(std::floor(x));
      const long x1 = std::min(x0 + 1, max_c);
      const double fx = x - x0;
      const double top = (1 - fx) * src(y0, x0) + fx * src(y0, x1);
      const double bot = (1 - fx) * src(y1, x0) + fx * src(y1, x1);
      out(r, c) = (1 - fy) * top + fy * bot;
    }
  }
  return out;
}

/// Nearest-neighbour resampling; the value set is preserved, so this is the only resize
/// ever applied to label masks.
template <typename T>
Grid<T> resize_nearest(const Grid<T>& src, std::size_t rows, std::size_t cols) {
  if (src.empty()) throw DataError("cannot resize an empty raster");
  Grid<T> out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto sr = std::min(src.rows() - 1,
                             static_cast<std::size_t>((r + 0.5) * src.rows() / rows));
    for (std::size_t c = 0; c < cols; ++c) {
      const auto sc = std::min(src.cols() - 1,
                               static_cast<std::size_t>((c + 0.5) * src.cols() / cols));
      out(r, c) = src(sr, sc);
    }
  }
  return out;
}

/// Min-max scaling to [0,1]; a constant raster maps to all zeros.
inline Image normalize_min_max(Image img) {
  const auto [lo, hi] = min_max(img);
  if (!(hi > lo)) {
    std::fill(img.values().begin(), img.values().end(), 0.0);
    return img;
  }
  const double span = hi - lo;
  for (auto& v : img.values()) v = std::clamp((v - lo) / span, 0.0, 1.0);
  return img;
}

/// Optional crop, bilinear resize to target_size x target_size, then min-max normalization.
inline Image resize_and_normalize(const Image& slice, const PreprocessConfig& cfg) {
  if (slice.empty()) throw DataError("resize_and_normalize: empty slice");
  const auto n = static_cast<std::size_t>(cfg.target_size);
  if (cfg.crop) return normalize_min_max(resize_bilinear(crop(slice, *cfg.crop), n, n));
  return normalize_min_max(resize_bilinear(slice, n, n));
}

/// Full input path for one slice: denoise, then crop/resize/normalize.
inline Image preprocess_slice(const Image& slice, const PreprocessConfig& cfg) {
  return resize_and_normalize(denoise(slice, cfg), cfg);
}

/// Ground-truth path: same crop, nearest-neighbour resize.
inline LabelMask preprocess_mask(const LabelMask& mask, const PreprocessConfig& cfg) {
  const auto n = static_cast<std::size_t>(cfg.target_size);
  if (cfg.crop) return resize_nearest(crop(mask, *cfg.crop), n, n);
  return resize_nearest(mask, n, n);
}

}  // namespace spineseg
