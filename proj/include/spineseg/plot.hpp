#pragma once

// Minimal raster charts written as RGB PNG: line plots over epochs and bar plots.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "spineseg/error.hpp"
#include "spineseg/png_io.hpp"

namespace spineseg::plot {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

inline constexpr std::array<Rgb, 6> kPalette{{{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                                              {214, 39, 40}, {148, 103, 189}, {140, 86, 75}}};

struct Series {
  std::string name;
  std::vector<double> y;  // plotted at x = 1, 2, ...
};

struct LinePlot {
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
};

struct BarPlot {
  std::string title;
  std::string y_label;
  std::vector<std::string> labels;
  std::vector<double> values;
  double y_max = 1.0;
};

class Canvas {
 public:
  Canvas(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), px_(rows * cols * 3, 255) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  const std::vector<std::uint8_t>& pixels() const noexcept { return px_; }

  void set(long r, long c, Rgb color) {
    if (r < 0 || c < 0 || r >= static_cast<long>(rows_) || c >= static_cast<long>(cols_)) return;
    auto* p = &px_[(static_cast<std::size_t>(r) * cols_ + static_cast<std::size_t>(c)) * 3];
    p[0] = color.r;
    p[1] = color.g;
    p[2] = color.b;
  }

  Rgb at(long r, long c) const {
    const auto* p = &px_[(static_cast<std::size_t>(r) * cols_ + static_cast<std::size_t>(c)) * 3];
    return {p[0], p[1], p[2]};
  }

  void fill_rect(long r0, long c0, long r1, long c1, Rgb color) {
    for (long r = r0; r <= r1; ++r)
      for (long c = c0; c <= c1; ++c) set(r, c, color);
  }

  /// Bresenham line, `thick` pixels wide.
  void line(long r0, long c0, long r1, long c1, Rgb color, int thick = 1) {
    const long dr = std::abs(r1 - r0), dc = std::abs(c1 - c0);
    const long sr = r0 < r1 ? 1 : -1, sc = c0 < c1 ? 1 : -1;
    long err = dc - dr;
    for (;;) {
      fill_rect(r0 - (thick - 1) / 2, c0 - (thick - 1) / 2, r0 + thick / 2, c0 + thick / 2, color);
      if (r0 == r1 && c0 == c1) break;
      const long e2 = 2 * err;
      if (e2 > -dr) {
        err -= dr;
        c0 += sc;
      }
      if (e2 < dc) {
        err += dc;
        r0 += sr;
      }
    }
  }

  /// Draws text with a 3x5 pixel font scaled by `scale`; returns the width used.
  long text(long r, long c, const std::string& s, Rgb color, int scale = 2) {
    long x = c;
    for (char ch : s) {
      const auto& g = glyph(ch);
      for (int gr = 0; gr < 5; ++gr)
        for (int gc = 0; gc < 3; ++gc)
          if (g[static_cast<std::size_t>(gr)][static_cast<std::size_t>(gc)] == '#')
            fill_rect(r + gr * scale, x + gc * scale, r + gr * scale + scale - 1, x + gc * scale + scale - 1, color);
      x += 4 * scale;
    }
    return x - c;
  }

  static long text_width(const std::string& s, int scale = 2) { return static_cast<long>(s.size()) * 4 * scale; }

  void save(const std::filesystem::path& path) const { png::write_rgb8(path, rows_, cols_, px_); }

 private:
  using Glyph = std::array<const char*, 5>;

  static const Glyph& glyph(char ch) {
    static const Glyph blank{"...", "...", "...", "...", "..."};
    static const std::array<std::pair<char, Glyph>, 46> table{{
        {'0', {"###", "#.#", "#.#", "#.#", "###"}}, {'1', {".#.", "##.", ".#.", ".#.", "###"}},
        {'2', {"###", "..#", "###", "#..", "###"}}, {'3', {"###", "..#", ".##", "..#", "###"}},
        {'4', {"#.#", "#.#", "###", "..#", "..#"}}, {'5', {"###", "#..", "###", "..#", "###"}},
        {'6', {"###", "#..", "###", "#.#", "###"}}, {'7', {"###", "..#", ".#.", ".#.", ".#."}},
        {'8', {"###", "#.#", "###", "#.#", "###"}}, {'9', {"###", "#.#", "###", "..#", "###"}},
        {'A', {".#.", "#.#", "###", "#.#", "#.#"}}, {'B', {"##.", "#.#", "##.", "#.#", "##."}},
        {'C', {"###", "#..", "#..", "#..", "###"}}, {'D', {"##.", "#.#", "#.#", "#.#", "##."}},
        {'E', {"###", "#..", "##.", "#..", "###"}}, {'F', {"###", "#..", "##.", "#..", "#.."}},
        {'G', {"###", "#..", "#.#", "#.#", "###"}}, {'H', {"#.#", "#.#", "###", "#.#", "#.#"}},
        {'I', {"###", ".#.", ".#.", ".#.", "###"}}, {'J', {"..#", "..#", "..#", "#.#", "###"}},
        {'K', {"#.#", "#.#", "##.", "#.#", "#.#"}}, {'L', {"#..", "#..", "#..", "#..", "###"}},
        {'M', {"#.#", "###", "###", "#.#", "#.#"}}, {'N', {"##.", "#.#", "#.#", "#.#", "#.#"}},
        {'O', {"###", "#.#", "#.#", "#.#", "###"}}, {'P', {"###", "#.#", "###", "#..", "#.."}},
        {'Q', {"###", "#.#", "#.#", "###", "..#"}}, {'R', {"##.", "#.#", "##.", "#.#", "#.#"}},
        {'S', {"###", "#..", "###", "..#", "###"}}, {'T', {"###", ".#.", ".#.", ".#.", ".#."}},
        {'U', {"#.#", "#.#", "#.#", "#.#", "###"}}, {'V', {"#.#", "#.#", "#.#", "#.#", ".#."}},
        {'W', {"#.#", "#.#", "###", "###", "#.#"}}, {'X', {"#.#", "#.#", ".#.", "#.#", "#.#"}},
        {'Y', {"#.#", "#.#", ".#.", ".#.", ".#."}}, {'Z', {"###", "..#", ".#.", "#..", "###"}},
        {'.', {"...", "...", "...", "...", ".#."}}, {'-', {"...", "...", "###", "...", "..."}},
        {'+', {"...", ".#.", "###", ".#.", "..."}}, {':', {"...", ".#.", "...", ".#.", "..."}},
        {'%', {"#.#", "..#", ".#.", "#..", "#.#"}}, {'(', {"..#", ".#.", ".#.", ".#.", "..#"}},
        {')', {"#..", ".#.", ".#.", ".#.", "#.."}}, {'/', {"..#", "..#", ".#.", "#..", "#.."}},
        {'_', {"...", "...", "...", "...", "###"}}, {'=', {"...", "###", "...", "###", "..."}},
    }};
    const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    for (const auto& [c, g] : table)
      if (c == up) return g;
    return blank;
  }

  std::size_t rows_, cols_;
  std::vector<std::uint8_t> px_;
};

namespace detail {

inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGrid{225, 225, 225};
inline constexpr long kWidth = 640, kHeight = 400;
inline constexpr long kLeft = 80, kRight = 20, kTop = 40, kBottom = 50;

inline std::string format_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

struct Frame {
  double y_lo, y_hi;
  long row(double y) const {
    const double t = (y - y_lo) / (y_hi - y_lo);
    return kTop + static_cast<long>(std::lround((1.0 - t) * static_cast<double>(kHeight - kTop - kBottom)));
  }
};

inline void draw_frame(Canvas& cv, const Frame& f, const std::string& title, const std::string& x_label,
                       const std::string& y_label) {
  const long bottom = kHeight - kBottom, right = kWidth - kRight;
  for (int k = 0; k <= 4; ++k) {
    const double y = f.y_lo + (f.y_hi - f.y_lo) * k / 4.0;
    const long r = f.row(y);
    cv.line(r, kLeft, r, right, kGrid);
    const std::string s = format_tick(y);
    cv.text(r - 5, kLeft - 6 - Canvas::text_width(s), s, kBlack);
  }
  cv.line(kTop, kLeft, bottom, kLeft, kBlack);
  cv.line(bottom, kLeft, bottom, right, kBlack);
  cv.text(12, (kWidth - Canvas::text_width(title)) / 2, title, kBlack);
  cv.text(kHeight - 16, (kWidth - Canvas::text_width(x_label)) / 2, x_label, kBlack);
  cv.text(kTop - 16, 8, y_label, kBlack);
}

}  // namespace detail

inline Canvas render(const LinePlot& p) {
  using namespace detail;
  std::size_t n_max = 0;
  double lo = INFINITY, hi = -INFINITY;
  for (const auto& s : p.series) {
    n_max = std::max(n_max, s.y.size());
    for (double v : s.y) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (n_max == 0) throw DataError("line plot '" + p.title + "' has no points");
  if (!(lo <= hi)) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-12) {
    const double pad = std::max(std::abs(lo) * 0.1, 0.5);
    lo -= pad;
    hi += pad;
  } else {
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
  Canvas cv(kHeight, kWidth);
  const Frame f{lo, hi};
  draw_frame(cv, f, p.title, p.x_label, p.y_label);

  const long plot_w = kWidth - kLeft - kRight - 20;
  const auto col = [&](std::size_t i) {
    if (n_max == 1) return kLeft + 10 + plot_w / 2;
    return kLeft + 10 + static_cast<long>(std::lround(static_cast<double>(i) * plot_w / static_cast<double>(n_max - 1)));
  };
  for (std::size_t t : {std::size_t{0}, (n_max - 1) / 2, n_max - 1}) {
    const std::string s = std::to_string(t + 1);
    cv.text(kHeight - kBottom + 8, col(t) - Canvas::text_width(s) / 2, s, kBlack);
  }
  for (std::size_t k = 0; k < p.series.size(); ++k) {
    const Rgb color = kPalette[k % kPalette.size()];
    const auto& y = p.series[k].y;
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (!std::isfinite(y[i])) continue;
      const long r = f.row(y[i]), c = col(i);
      if (i > 0 && std::isfinite(y[i - 1])) cv.line(f.row(y[i - 1]), col(i - 1), r, c, color, 2);
      if (y.size() <= 60) cv.fill_rect(r - 2, c - 2, r + 2, c + 2, color);
    }
    const long lr = kTop + 6 + static_cast<long>(k) * 16;
    const long lc = kWidth - kRight - 20 - Canvas::text_width(p.series[k].name);
    cv.fill_rect(lr, lc - 16, lr + 8, lc - 6, color);
    cv.text(lr, lc, p.series[k].name, kBlack);
  }
  return cv;
}

inline Canvas render(const BarPlot& p) {
  using namespace detail;
  if (p.values.empty() || p.values.size() != p.labels.size()) {
    throw DataError("bar plot '" + p.title + "' needs one label per value");
  }
  Canvas cv(kHeight, kWidth);
  const Frame f{0.0, p.y_max};
  draw_frame(cv, f, p.title, "", p.y_label);
  const long slot = (kWidth - kLeft - kRight) / static_cast<long>(p.values.size());
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const double v = std::isfinite(p.values[i]) ? std::clamp(p.values[i], 0.0, p.y_max) : 0.0;
    const long c0 = kLeft + static_cast<long>(i) * slot + slot / 5;
    const long c1 = kLeft + static_cast<long>(i + 1) * slot - slot / 5;
    cv.fill_rect(f.row(v), c0, kHeight - kBottom - 1, c1, kPalette[0]);
    cv.text(kHeight - kBottom + 8, (c0 + c1) / 2 - Canvas::text_width(p.labels[i]) / 2, p.labels[i], kBlack);
    if (std::isfinite(p.values[i])) {
      const std::string s = format_tick(p.values[i]);
      cv.text(f.row(v) - 14, (c0 + c1) / 2 - Canvas::text_width(s) / 2, s, kBlack);
    }
  }
  return cv;
}

template <typename P>
void save(const P& plot, const std::filesystem::path& path) {
  render(plot).save(path);
}

}  // namespace spineseg::plot
