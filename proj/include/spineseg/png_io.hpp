#pragma once

// Thin wrappers over libpng's simplified API.

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "spineseg/error.hpp"

namespace spineseg::png {

struct GrayImage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  int bit_depth = 8;                 // 8 or 16
  std::vector<std::uint16_t> pixels;  // row-major, raw values
};

namespace detail {

struct ImageGuard {
  png_image image;
  ImageGuard() {
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
  }
  ~ImageGuard() { png_image_free(&image); }
  ImageGuard(const ImageGuard&) = delete;
  ImageGuard& operator=(const ImageGuard&) = delete;
};

inline void write_file(png_image& image, const std::filesystem::path& path, const void* buffer,
                       std::ptrdiff_t row_stride) {
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer,
                               static_cast<png_int_32>(row_stride), nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

}  // namespace detail

/// Reads a grayscale PNG. 16-bit files keep 16-bit values, everything else is read as 8-bit.
inline GrayImage read_gray(const std::filesystem::path& path) {
  detail::ImageGuard guard;
  png_image& image = guard.image;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + image.message);
  }
  GrayImage out;
  out.rows = image.height;
  out.cols = image.width;
  const bool sixteen = (image.format & PNG_FORMAT_FLAG_LINEAR) != 0;
  out.bit_depth = sixteen ? 16 : 8;
  out.pixels.resize(out.rows * out.cols);
  if (sixteen) {
    image.format = PNG_FORMAT_LINEAR_Y;
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
      throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
    }
  } else {
    std::vector<std::uint8_t> bytes(out.pixels.size());
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_finish_read(&image, nullptr, bytes.data(), 0, nullptr)) {
      throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    std::copy(bytes.begin(), bytes.end(), out.pixels.begin());
  }
  return out;
}

inline void write_gray8(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                        const std::vector<std::uint8_t>& pixels) {
  detail::ImageGuard guard;
  guard.image.width = static_cast<png_uint_32>(cols);
  guard.image.height = static_cast<png_uint_32>(rows);
  guard.image.format = PNG_FORMAT_GRAY;
  detail::write_file(guard.image, path, pixels.data(), static_cast<std::ptrdiff_t>(cols));
}

inline void write_gray16(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                         const std::vector<std::uint16_t>& pixels) {
  detail::ImageGuard guard;
  guard.image.width = static_cast<png_uint_32>(cols);
  guard.image.height = static_cast<png_uint_32>(rows);
  guard.image.format = PNG_FORMAT_LINEAR_Y;
  detail::write_file(guard.image, path, pixels.data(), static_cast<std::ptrdiff_t>(cols));
}

/// `pixels` holds interleaved RGB bytes.
inline void write_rgb8(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                       const std::vector<std::uint8_t>& pixels) {
  detail::ImageGuard guard;
  guard.image.width = static_cast<png_uint_32>(cols);
  guard.image.height = static_cast<png_uint_32>(rows);
  guard.image.format = PNG_FORMAT_RGB;
  detail::write_file(guard.image, path, pixels.data(), static_cast<std::ptrdiff_t>(3 * cols));
}

}  // namespace spineseg::png
