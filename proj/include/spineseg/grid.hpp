#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spineseg/error.hpp"

namespace spineseg {

/// Dense row-major 2D raster.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  bool same_shape(const Grid& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

/// Grayscale slice, intensities nominally in [0,1].
using Image = Grid<double>;

/// Per-pixel class codes, 0 = background, 1..7 = vertebrae.
using LabelMask = Grid<std::uint8_t>;

struct Shape2D {
  std::size_t rows = 0;
  std::size_t cols = 0;
  friend bool operator==(const Shape2D&, const Shape2D&) = default;
};

template <typename T>
Shape2D shape_of(const Grid<T>& g) {
  return {g.rows(), g.cols()};
}

template <typename A, typename B>
void require_same_shape(const Grid<A>& a, const Grid<B>& b, const std::string& what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(what + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

inline std::pair<double, double> min_max(const Image& img) {
  auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
  return {*lo, *hi};
}

}  // namespace spineseg
