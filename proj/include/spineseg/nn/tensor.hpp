#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "spineseg/error.hpp"

namespace spineseg::nn {

using Shape4 = std::array<std::size_t, 4>;

inline std::string to_string(const Shape4& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) +
         "," + std::to_string(s[3]) + ")";
}

/// Dense NCHW tensor.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T{})
      : shape_{n, c, h, w}, data_(n * c * h * w, fill) {}
  explicit Tensor(const Shape4& s, T fill = T{}) : Tensor(s[0], s[1], s[2], s[3], fill) {}

  const Shape4& shape() const noexcept { return shape_; }
  std::size_t n() const noexcept { return shape_[0]; }
  std::size_t c() const noexcept { return shape_[1]; }
  std::size_t h() const noexcept { return shape_[2]; }
  std::size_t w() const noexcept { return shape_[3]; }
  std::size_t plane() const noexcept { return shape_[2] * shape_[3]; }
  std::size_t size() const noexcept { return data_.size(); }

  T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  /// Start of the (n, c) plane.
  T* plane_ptr(std::size_t n, std::size_t c) { return data_.data() + (n * shape_[1] + c) * plane(); }
  const T* plane_ptr(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_[1] + c) * plane();
  }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& other) {
    require_shape(other.shape_, "tensor +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  void require_shape(const Shape4& s, const char* what) const {
    if (s != shape_) throw ShapeError(std::string(what) + ": expected " + to_string(shape_) + ", got " + to_string(s));
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape4 shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

/// Channel-wise concatenation [a, b].
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw ShapeError("concat_channels: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  const std::size_t pa = a.c() * a.plane();
  const std::size_t pb = b.c() * b.plane();
  for (std::size_t n = 0; n < a.n(); ++n) {
    std::copy_n(a.data() + n * pa, pa, out.data() + n * (pa + pb));
    std::copy_n(b.data() + n * pb, pb, out.data() + n * (pa + pb) + pa);
  }
  return out;
}

/// Inverse of concat_channels: first `ca` channels, then the rest.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, std::size_t ca) {
  Tensor<T> a(t.n(), ca, t.h(), t.w());
  Tensor<T> b(t.n(), t.c() - ca, t.h(), t.w());
  const std::size_t pa = a.c() * a.plane();
  const std::size_t pb = b.c() * b.plane();
  for (std::size_t n = 0; n < t.n(); ++n) {
    std::copy_n(t.data() + n * (pa + pb), pa, a.data() + n * pa);
    std::copy_n(t.data() + n * (pa + pb) + pa, pb, b.data() + n * pb);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace spineseg::nn
