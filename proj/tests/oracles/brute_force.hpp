#pragma once

// Independent reference implementations used only by the test suites.
// They follow the textual definitions directly (doubles, no lookup tables
// shared with the library, no incremental tricks).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace oracle {

struct Image {
  int w = 0, h = 0;
  std::vector<int> px;
  int at(int x, int y) const { return px[y * w + x]; }
};

inline int round_half_away(double v) { return static_cast<int>(v < 0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5)); }

/// y = 5x - (right + left + down + up), replicate borders, clamp.
inline std::vector<int> sharpen(const Image& in) {
  std::vector<int> out(in.px.size());
  auto px = [&](int x, int y) {
    x = std::clamp(x, 0, in.w - 1);
    y = std::clamp(y, 0, in.h - 1);
    return in.at(x, y);
  };
  for (int i = 0; i < in.h; ++i) {
    for (int j = 0; j < in.w; ++j) {
      double v = 5.0 * px(j, i) - (px(j, i + 1) + px(j, i - 1) + px(j + 1, i) + px(j - 1, i));
      out[i * in.w + j] = std::clamp(round_half_away(v), 0, 255);
    }
  }
  return out;
}

/// Plain CLAHE: replicate-pad to the tile grid, per-tile 256-bin histogram,
/// clip + uniform redistribution (remainder to the lowest bins), CDF LUT,
/// then for every pixel an explicit bilinear blend of the four nearest
/// tile-centre LUTs with the weights clamped at the borders.
inline std::vector<int> clahe(const Image& in, int tiles_x, int tiles_y, double clip_limit) {
  const int tw = (in.w + tiles_x - 1) / tiles_x;
  const int th = (in.h + tiles_y - 1) / tiles_y;
  auto padded = [&](int x, int y) { return in.at(std::min(x, in.w - 1), std::min(y, in.h - 1)); };
  std::vector<std::vector<double>> lut(tiles_x * tiles_y, std::vector<double>(256));
  for (int ty = 0; ty < tiles_y; ++ty) {
    for (int tx = 0; tx < tiles_x; ++tx) {
      std::vector<long> hist(256, 0);
      for (int y = ty * th; y < ty * th + th; ++y)
        for (int x = tx * tw; x < tx * tw + tw; ++x) hist[padded(x, y)] += 1;
      const long pixels = static_cast<long>(tw) * th;
      if (!std::isinf(clip_limit)) {
        long clip = std::max(1L, static_cast<long>(std::floor(clip_limit * pixels / 256.0 + 0.5)));
        long excess = 0;
        for (auto& c : hist) {
          if (c > clip) {
            excess += c - clip;
            c = clip;
          }
        }
        for (int b = 0; b < 256; ++b) hist[b] += excess / 256;
        for (long b = 0; b < excess % 256; ++b) hist[b] += 1;
      }
      long total = 0;
      for (auto c : hist) total += c;
      long cdf = 0;
      for (int v = 0; v < 256; ++v) {
        cdf += hist[v];
        lut[ty * tiles_x + tx][v] = round_half_away(255.0 * static_cast<double>(cdf) / static_cast<double>(total));
      }
    }
  }
  std::vector<int> out(in.px.size());
  for (int y = 0; y < in.h; ++y) {
    for (int x = 0; x < in.w; ++x) {
      // Position in tile-centre coordinates.
      double gx = (x + 0.5) / tw - 0.5;
      double gy = (y + 0.5) / th - 0.5;
      int x0 = static_cast<int>(std::floor(gx)), y0 = static_cast<int>(std::floor(gy));
      double fx = gx - x0, fy = gy - y0;
      int x1 = x0 + 1, y1 = y0 + 1;
      if (gx < 0) { x0 = x1 = 0; fx = 0; }
      if (x1 > tiles_x - 1) { x0 = x1 = tiles_x - 1; fx = 0; }
      if (gy < 0) { y0 = y1 = 0; fy = 0; }
      if (y1 > tiles_y - 1) { y0 = y1 = tiles_y - 1; fy = 0; }
      const int v = in.at(x, y);
      const double l00 = lut[y0 * tiles_x + x0][v], l01 = lut[y0 * tiles_x + x1][v];
      const double l10 = lut[y1 * tiles_x + x0][v], l11 = lut[y1 * tiles_x + x1][v];
      double val = (1 - fy) * ((1 - fx) * l00 + fx * l01) + fy * ((1 - fx) * l10 + fx * l11);
      // Snap away float noise so exact halves round as halves.
      val = std::round(val * 1e6) / 1e6;
      out[y * in.w + x] = std::clamp(round_half_away(val), 0, 255);
    }
  }
  return out;
}

}  // namespace oracle
