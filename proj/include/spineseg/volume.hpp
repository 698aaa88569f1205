#pragma once

// Dense volume reconstruction from a sparse sagittal stack by linear interpolation
// along the slice axis, and re-slicing back to a stack.

#include <cstddef>
#include <string>
#include <vector>

#include "spineseg/dataio.hpp"
#include "spineseg/error.hpp"
#include "spineseg/grid.hpp"

namespace spineseg {

/// Voxels indexed (slice, row, col); consecutive slices are `slice_spacing_px` apart.
class Volume3D {
 public:
  Volume3D() = default;
  Volume3D(std::size_t depth, std::size_t rows, std::size_t cols, int slice_spacing_px = 1,
           int pixel_per_mm = kDefaultPixelPerMm)
      : depth_(depth),
        rows_(rows),
        cols_(cols),
        slice_spacing_px_(slice_spacing_px),
        pixel_per_mm_(pixel_per_mm),
        voxels_(depth * rows * cols, 0.0) {
    if (depth == 0 || rows == 0 || cols == 0) throw DataError("volume must be non-empty");
  }

  std::size_t depth() const noexcept { return depth_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  int slice_spacing_px() const noexcept { return slice_spacing_px_; }
  int pixel_per_mm() const noexcept { return pixel_per_mm_; }

  double& operator()(std::size_t s, std::size_t r, std::size_t c) {
    return voxels_[(s * rows_ + r) * cols_ + c];
  }
  double operator()(std::size_t s, std::size_t r, std::size_t c) const {
    return voxels_[(s * rows_ + r) * cols_ + c];
  }

  Image slice(std::size_t s) const {
    Image img(rows_, cols_);
    std::copy_n(voxels_.begin() + static_cast<std::ptrdiff_t>(s * rows_ * cols_), rows_ * cols_,
                img.data());
    return img;
  }

  void set_slice(std::size_t s, const Image& img) {
    std::copy_n(img.data(), rows_ * cols_,
                voxels_.begin() + static_cast<std::ptrdiff_t>(s * rows_ * cols_));
  }

 private:
  std::size_t depth_ = 0, rows_ = 0, cols_ = 0;
  int slice_spacing_px_ = 1;
  int pixel_per_mm_ = kDefaultPixelPerMm;
  std::vector<double> voxels_;
};

/// Resamples the stack to `target_gap_px` spacing. Original slices land unchanged at
/// indices k * (gap / target); slices in between blend their two enclosing originals
/// per pixel with weights (1 - t, t).
inline Volume3D reconstruct_volume(const SliceStack& stack, int target_gap_px = 1) {
  if (stack.size() < 2) throw DataError("reconstruct_volume needs at least 2 slices");
  stack.validate();
  if (target_gap_px < 1 || stack.slice_gap_px % target_gap_px != 0) {
    throw DataError("target gap " + std::to_string(target_gap_px) +
                    " px does not divide slice gap " + std::to_string(stack.slice_gap_px));
  }
  const std::size_t ratio = static_cast<std::size_t>(stack.slice_gap_px / target_gap_px);
  const auto [rows, cols] = stack.slice_shape();
  Volume3D vol((stack.size() - 1) * ratio + 1, rows, cols, target_gap_px, stack.pixel_per_mm);

  for (std::size_t k = 0; k + 1 < stack.size(); ++k) {
    const Image& lo = stack.slices[k];
    const Image& hi = stack.slices[k + 1];
    vol.set_slice(k * ratio, lo);
    for (std::size_t j = 1; j < ratio; ++j) {
      const double t = static_cast<double>(j) / static_cast<double>(ratio);
      const std::size_t s = k * ratio + j;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          vol(s, r, c) = (1.0 - t) * lo(r, c) + t * hi(r, c);
        }
      }
    }
  }
  vol.set_slice(vol.depth() - 1, stack.slices.back());
  return vol;
}

/// Every slice `gap_px` pixels apart, starting from the first.
inline SliceStack extract_sagittal_slices(const Volume3D& vol, int gap_px) {
  if (gap_px < 1) throw DataError("gap_px must be >= 1");
  if (gap_px % vol.slice_spacing_px() != 0) {
    throw DataError("gap_px must be a multiple of the volume slice spacing");
  }
  const std::size_t step = static_cast<std::size_t>(gap_px / vol.slice_spacing_px());
  if (step > vol.depth()) {
    throw DataError("gap_px " + std::to_string(gap_px) + " exceeds slice count " +
                    std::to_string(vol.depth()));
  }
  SliceStack out;
  out.slice_gap_px = gap_px;
  out.pixel_per_mm = vol.pixel_per_mm();
  for (std::size_t s = 0; s < vol.depth(); s += step) out.slices.push_back(vol.slice(s));
  return out;
}

/// All slices of a volume as a stack at the volume's native spacing.
inline SliceStack volume_as_stack(const Volume3D& vol) {
  return extract_sagittal_slices(vol, vol.slice_spacing_px());
}

}  // namespace spineseg
