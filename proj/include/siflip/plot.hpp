#pragma once

// Minimal raster plots written as PNG: loss curves, similarity heatmaps and
// sweep curves.  Output depends only on the input numbers.

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "siflip/errors.hpp"

namespace siflip::plot {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kWhite{255, 255, 255};
inline constexpr Rgb kBlack{0, 0, 0};
inline constexpr Rgb kGrid{225, 225, 225};

/// Distinct line colours, cycled.
inline const std::vector<Rgb>& palette() {
  static const std::vector<Rgb> p{{31, 119, 180}, {255, 127, 14}, {44, 160, 44},  {214, 39, 40},
                                  {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};
  return p;
}

struct Image {
  std::size_t width = 0, height = 0;
  std::vector<std::uint8_t> pixels;

  Image(std::size_t w, std::size_t h, Rgb fill = kWhite) : width(w), height(h), pixels(w * h * 3) {
    for (std::size_t i = 0; i < w * h; ++i) std::copy(fill.begin(), fill.end(), pixels.begin() + static_cast<std::ptrdiff_t>(3 * i));
  }

  void set(long x, long y, Rgb c) {
    if (x < 0 || y < 0 || x >= static_cast<long>(width) || y >= static_cast<long>(height)) return;
    std::copy(c.begin(), c.end(), pixels.begin() + static_cast<std::ptrdiff_t>(3 * (static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x))));
  }

  Rgb get(std::size_t x, std::size_t y) const {
    const auto* p = &pixels[3 * (y * width + x)];
    return {p[0], p[1], p[2]};
  }

  void fill_rect(long x0, long y0, long x1, long y1, Rgb c) {
    for (long y = y0; y < y1; ++y)
      for (long x = x0; x < x1; ++x) set(x, y, c);
  }

  void line(long x0, long y0, long x1, long y1, Rgb c, int thickness = 1) {
    const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    for (;;) {
      for (int a = 0; a < thickness; ++a)
        for (int b = 0; b < thickness; ++b) set(x0 + a - thickness / 2, y0 + b - thickness / 2, c);
      if (x0 == x1 && y0 == y1) break;
      const long e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
};

inline void write_png(const std::filesystem::path& path, const Image& img) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw Error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw Error("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + 3 * y * img.width));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

struct Series {
  std::string name;
  std::vector<double> x, y;  // NaN y values are skipped
};

struct Frame {
  long left = 40, top = 20, right = 20, bottom = 30;
};

/// Line chart of several series on shared linear axes with a light grid and
/// a colour-keyed legend strip along the top.
inline Image line_chart(const std::vector<Series>& series, std::size_t width = 640, std::size_t height = 400) {
  Image img(width, height);
  const Frame f;
  const long x0 = f.left, y0 = f.top, x1 = static_cast<long>(width) - f.right, y1 = static_cast<long>(height) - f.bottom;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (!std::isfinite(xmin)) throw InputError("nothing to plot");
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) ymax = ymin + 1.0;
  ymin = std::min(ymin, 0.0);
  auto px = [&](double x) { return x0 + std::lround((x - xmin) / (xmax - xmin) * static_cast<double>(x1 - x0)); };
  auto py = [&](double y) { return y1 - std::lround((y - ymin) / (ymax - ymin) * static_cast<double>(y1 - y0)); };
  for (int k = 1; k < 5; ++k) {
    const long gy = y1 - (y1 - y0) * k / 5, gx = x0 + (x1 - x0) * k / 5;
    img.line(x0, gy, x1, gy, kGrid);
    img.line(gx, y0, gx, y1, kGrid);
  }
  img.line(x0, y1, x1, y1, kBlack);
  img.line(x0, y0, x0, y1, kBlack);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Rgb c = palette()[k % palette().size()];
    img.fill_rect(x0 + 4 + static_cast<long>(k) * 16, 4, x0 + 14 + static_cast<long>(k) * 16, 14, c);
    const auto& s = series[k];
    bool have_prev = false;
    long lx = 0, ly = 0;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      const long cx = px(s.x[i]), cy = py(s.y[i]);
      if (have_prev) img.line(lx, ly, cx, cy, c, 2);
      img.fill_rect(cx - 2, cy - 2, cx + 3, cy + 3, c);
      lx = cx;
      ly = cy;
      have_prev = true;
    }
  }
  return img;
}

/// Blue-white-red map of values in [lo, hi].
inline Rgb diverging(double v, double lo, double hi) {
  double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
  t = std::clamp(t, 0.0, 1.0);
  auto mix = [](Rgb a, Rgb b, double s) {
    Rgb r;
    for (int i = 0; i < 3; ++i) r[i] = static_cast<std::uint8_t>(std::lround(a[i] + (b[i] - a[i]) * s));
    return r;
  };
  const Rgb blue{33, 102, 172}, white{247, 247, 247}, red{178, 24, 43};
  return t < 0.5 ? mix(blue, white, t * 2.0) : mix(white, red, (t - 0.5) * 2.0);
}

/// Square heatmap of a row-major rows x cols matrix (values in [-1, 1]).
inline Image heatmap(const std::vector<double>& m, std::size_t rows, std::size_t cols, std::size_t cell = 16) {
  if (rows == 0 || cols == 0 || m.size() != rows * cols) throw ShapeError("heatmap: matrix size does not match its shape");
  const std::size_t pad = 4;
  Image img(cols * cell + 2 * pad, rows * cell + 2 * pad);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      img.fill_rect(static_cast<long>(pad + c * cell), static_cast<long>(pad + r * cell), static_cast<long>(pad + (c + 1) * cell),
                    static_cast<long>(pad + (r + 1) * cell), diverging(m[r * cols + c], -1.0, 1.0));
  return img;
}

/// Parsed CSV: header names and rows of numbers; empty cells become NaN.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name) return i;
    throw ParseError("CSV has no column " + name);
  }

  std::vector<double> values(const std::string& name) const {
    const auto k = column(name);
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(k < r.size() ? r[k] : std::nan(""));
    return out;
  }
};

/// Reads a numeric CSV; the first column may be non-numeric labels, which are
/// kept in `labels` when given.
inline Table read_csv(const std::filesystem::path& path, std::vector<std::string>* labels = nullptr) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  Table t;
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw InputError(path.string() + " is empty");
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) t.columns.push_back(cell);
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    std::size_t k = 0;
    while (std::getline(ss, cell, ',')) {
      if (k == 0 && labels) labels->push_back(cell);
      if (cell.empty()) row.push_back(std::nan(""));
      else {
        try {
          std::size_t used = 0;
          row.push_back(std::stod(cell, &used));
          if (used != cell.size()) row.back() = std::nan("");
        } catch (const std::exception&) {
          row.push_back(std::nan(""));
        }
      }
      ++k;
    }
    if (line.back() == ',') row.push_back(std::nan(""));
    t.rows.push_back(std::move(row));
  }
  if (t.rows.empty()) throw InputError(path.string() + " has no data rows");
  return t;
}

}  // namespace siflip::plot
