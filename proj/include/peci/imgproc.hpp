#pragma once

// Classical X-ray enhancement: identity, Laplacian sharpening, CLAHE and
// their left-to-right compositions. Everything here is a pure function.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "peci/error.hpp"
#include "peci/image.hpp"

namespace peci::imgproc {

inline constexpr int kBins = 256;
using Histogram = std::array<std::int64_t, kBins>;
using Lut = std::array<std::uint8_t, kBins>;

/// Sentinel for "no clipping".
inline constexpr double kNoClip = std::numeric_limits<double>::infinity();

struct ClaheParams {
  int tiles_x = 8;
  int tiles_y = 8;
  /// Relative to the mean bin height: the absolute ceiling is
  /// max(1, round(clip_limit * tile_pixels / 256)).
  double clip_limit = 2.0;
  int bins = kBins;

  void validate() const {
    if (tiles_x < 1 || tiles_y < 1) fail(ErrorCode::BadParams, "CLAHE tile grid must be >= 1x1");
    if (!(clip_limit > 1.0)) fail(ErrorCode::BadParams, "CLAHE clip limit must be > 1 or infinite");
    if (bins != kBins) fail(ErrorCode::BadParams, "CLAHE supports exactly 256 bins");
  }

  /// Absolute per-bin ceiling for a tile with `tile_pixels` pixels;
  /// returns a negative value when clipping is disabled.
  std::int64_t absolute_clip(std::int64_t tile_pixels) const {
    if (std::isinf(clip_limit)) return -1;
    const auto c = static_cast<std::int64_t>(std::round(clip_limit * static_cast<double>(tile_pixels) / kBins));
    return std::max<std::int64_t>(1, c);
  }

  friend bool operator==(const ClaheParams&, const ClaheParams&) = default;
};

/// Rounds a non-negative rational num/den half away from zero.
constexpr std::int64_t round_ratio(std::int64_t num, std::int64_t den) { return (2 * num + den) / (2 * den); }

inline GrayImage identity(const GrayImage& img) { return img; }

/// y = 5x - (4-neighbour sum) with replicate borders, clamped to [0,255].
inline GrayImage laplacian_sharpen(const GrayImage& img) {
  const int w = img.width();
  const int h = img.height();
  if (w < 3 || h < 3) fail(ErrorCode::ImageTooSmall, "sharpening needs at least 3x3 pixels");
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    const int yu = y > 0 ? y - 1 : 0;
    const int yd = y + 1 < h ? y + 1 : h - 1;
    for (int x = 0; x < w; ++x) {
      const int xl = x > 0 ? x - 1 : 0;
      const int xr = x + 1 < w ? x + 1 : w - 1;
      const int v = 5 * img(x, y) - (img(xr, y) + img(xl, y) + img(x, yd) + img(x, yu));
      out(x, y) = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
    }
  }
  return out;
}

/// Clips every bin at `clip` and spreads the excess uniformly, the
/// remainder going one count each to the lowest bins. clip < 0 disables.
inline Histogram clip_redistribute(const Histogram& hist, std::int64_t clip) {
  if (clip < 0) return hist;
  Histogram out{};
  std::int64_t excess = 0;
  for (int b = 0; b < kBins; ++b) {
    excess += std::max<std::int64_t>(0, hist[b] - clip);
    out[b] = std::min(hist[b], clip);
  }
  const std::int64_t share = excess / kBins;
  const std::int64_t remainder = excess % kBins;
  for (int b = 0; b < kBins; ++b) out[b] += share + (b < remainder ? 1 : 0);
  return out;
}

inline Lut tile_lut(const Histogram& hist) {
  std::int64_t total = 0;
  for (auto c : hist) total += c;
  if (total <= 0) fail(ErrorCode::EmptyHistogram, "cannot equalize an empty histogram");
  Lut lut{};
  std::int64_t cdf = 0;
  for (int v = 0; v < kBins; ++v) {
    cdf += hist[v];
    lut[v] = static_cast<std::uint8_t>(round_ratio(255 * cdf, total));
  }
  return lut;
}

namespace detail {

// Tile index pair and the numerator of the interpolation weight toward the
// upper index, over a denominator of 2 * tile_size.
struct Span1D {
  int lo;
  int hi;
  std::int64_t num;
};

inline Span1D locate(int pos, int tile_size, int tiles) {
  // Tile-centre coordinate g = (pos + 0.5) / tile_size - 0.5, kept as the
  // rational (2 pos + 1 - tile_size) / (2 tile_size).
  const std::int64_t den = 2LL * tile_size;
  const std::int64_t g = 2LL * pos + 1 - tile_size;
  if (g < 0) return {0, 0, 0};
  const int lo = static_cast<int>(g / den);
  if (lo + 1 > tiles - 1) return {tiles - 1, tiles - 1, 0};
  return {lo, lo + 1, g - static_cast<std::int64_t>(lo) * den};
}

}  // namespace detail

inline GrayImage clahe(const GrayImage& img, const ClaheParams& params) {
  params.validate();
  const int w = img.width();
  const int h = img.height();
  if (w < params.tiles_x || h < params.tiles_y || w == 0 || h == 0) {
    fail(ErrorCode::ImageTooSmall, "CLAHE tile grid larger than the image");
  }
  const int tw = (w + params.tiles_x - 1) / params.tiles_x;
  const int th = (h + params.tiles_y - 1) / params.tiles_y;
  const int pw = tw * params.tiles_x;
  // Replicate padding on the right and bottom.
  auto padded = [&](int x, int y) { return img(std::min(x, w - 1), std::min(y, h - 1)); };

  const std::int64_t clip = params.absolute_clip(static_cast<std::int64_t>(tw) * th);
  std::vector<Lut> luts(static_cast<std::size_t>(params.tiles_x) * params.tiles_y);
  for (int ty = 0; ty < params.tiles_y; ++ty) {
    for (int tx = 0; tx < params.tiles_x; ++tx) {
      Histogram hist{};
      for (int y = ty * th; y < (ty + 1) * th; ++y) {
        for (int x = tx * tw; x < (tx + 1) * tw; ++x) ++hist[padded(x, y)];
      }
      luts[static_cast<std::size_t>(ty) * params.tiles_x + tx] = tile_lut(clip_redistribute(hist, clip));
    }
  }

  std::vector<detail::Span1D> xs(pw);
  for (int x = 0; x < pw; ++x) xs[x] = detail::locate(x, tw, params.tiles_x);
  const std::int64_t dx = 2LL * tw;
  const std::int64_t dy = 2LL * th;
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    const auto sy = detail::locate(y, th, params.tiles_y);
    const auto row_lo = static_cast<std::size_t>(sy.lo) * params.tiles_x;
    const auto row_hi = static_cast<std::size_t>(sy.hi) * params.tiles_x;
    for (int x = 0; x < w; ++x) {
      const auto& sx = xs[x];
      const int v = img(x, y);
      const std::int64_t a = luts[row_lo + sx.lo][v];
      const std::int64_t b = luts[row_lo + sx.hi][v];
      const std::int64_t c = luts[row_hi + sx.lo][v];
      const std::int64_t d = luts[row_hi + sx.hi][v];
      const std::int64_t top = (dx - sx.num) * a + sx.num * b;
      const std::int64_t bottom = (dx - sx.num) * c + sx.num * d;
      const std::int64_t acc = (dy - sy.num) * top + sy.num * bottom;
      out(x, y) = static_cast<std::uint8_t>(round_ratio(acc, dx * dy));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipelines

enum class StepKind { Identity, Sharpen, Clahe };

struct Step {
  StepKind kind = StepKind::Identity;
  ClaheParams clahe{};  // used only when kind == Clahe

  friend bool operator==(const Step&, const Step&) = default;
};

struct PipelineSpec {
  std::vector<Step> steps;

  friend bool operator==(const PipelineSpec&, const PipelineSpec&) = default;

  /// Parses a comma-separated token list such as "clahe,sharpen".
  static PipelineSpec parse(std::string_view text, const ClaheParams& clahe_params = {}) {
    PipelineSpec spec;
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t end = std::min(text.find(',', start), text.size());
      std::string token(text.substr(start, end - start));
      std::erase_if(token, [](unsigned char c) { return std::isspace(c); });
      std::transform(token.begin(), token.end(), token.begin(), [](unsigned char c) { return std::tolower(c); });
      if (token == "identity") {
        spec.steps.push_back({StepKind::Identity, clahe_params});
      } else if (token == "sharpen") {
        spec.steps.push_back({StepKind::Sharpen, clahe_params});
      } else if (token == "clahe") {
        spec.steps.push_back({StepKind::Clahe, clahe_params});
      } else {
        fail(ErrorCode::BadParams, "unknown pipeline step '" + token + "'");
      }
      start = end + 1;
    }
    spec.validate();
    return spec;
  }

  std::string to_string() const {
    std::string out;
    for (const auto& s : steps) {
      if (!out.empty()) out += ',';
      out += s.kind == StepKind::Identity ? "identity" : s.kind == StepKind::Sharpen ? "sharpen" : "clahe";
    }
    return out;
  }

  void validate() const {
    if (steps.empty()) fail(ErrorCode::BadParams, "pipeline must contain at least one step");
    for (const auto& s : steps) {
      if (s.kind == StepKind::Clahe) s.clahe.validate();
    }
  }
};

inline GrayImage apply_pipeline(const PipelineSpec& spec, const GrayImage& img) {
  spec.validate();
  GrayImage cur = img;
  for (const auto& step : spec.steps) {
    switch (step.kind) {
      case StepKind::Identity: break;
      case StepKind::Sharpen: cur = laplacian_sharpen(cur); break;
      case StepKind::Clahe: cur = clahe(cur, step.clahe); break;
    }
  }
  return cur;
}

/// identity, sharpen, clahe, clahe+clahe, clahe+sharpen, in that order.
inline std::vector<PipelineSpec> default_pipelines(const ClaheParams& clahe_params = {}) {
  return {
      PipelineSpec::parse("identity", clahe_params), PipelineSpec::parse("sharpen", clahe_params),
      PipelineSpec::parse("clahe", clahe_params),    PipelineSpec::parse("clahe,clahe", clahe_params),
      PipelineSpec::parse("clahe,sharpen", clahe_params),
  };
}

}  // namespace peci::imgproc
