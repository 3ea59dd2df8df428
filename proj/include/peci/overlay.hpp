#pragma once

// Per-region prediction overlays: blue = true positive, green = false
// positive, red = false negative, gray frame elsewhere.

#include <array>
#include <cstdint>

#include "peci/image.hpp"
#include "peci/losses.hpp"

namespace peci::overlay {

inline constexpr std::array<std::uint8_t, 3> kTruePositive{0, 0, 255};
inline constexpr std::array<std::uint8_t, 3> kFalsePositive{0, 255, 0};
inline constexpr std::array<std::uint8_t, 3> kFalseNegative{255, 0, 0};

inline RgbImage render(const GrayImage& frame, const std::uint8_t* pred, const std::uint8_t* truth) {
  RgbImage out(frame.width(), frame.height());
  for (int y = 0; y < frame.height(); ++y)
    for (int x = 0; x < frame.width(); ++x) {
      const std::size_t j = static_cast<std::size_t>(y) * frame.width() + x;
      const std::uint8_t g = frame(x, y);
      std::array<std::uint8_t, 3> c{g, g, g};
      switch (losses::classify(pred[j] != 0, truth[j] != 0)) {
        case losses::PixelClass::TruePositive: c = kTruePositive; break;
        case losses::PixelClass::FalsePositive: c = kFalsePositive; break;
        case losses::PixelClass::FalseNegative: c = kFalseNegative; break;
        case losses::PixelClass::TrueNegative: break;
      }
      out.set(x, y, c[0], c[1], c[2]);
    }
  return out;
}

inline RgbImage render(const GrayImage& frame, const MaskSet& pred, const MaskSet& truth, Region r) {
  if (pred.width != frame.width() || pred.height != frame.height() || truth.width != frame.width() ||
      truth.height != frame.height()) {
    fail(ErrorCode::ShapeMismatch, "overlay: mask and frame sizes differ");
  }
  return render(frame, pred.channel(index_of(r)), truth.channel(index_of(r)));
}

/// Pixel census by color; gray pixels count as true negatives.
inline losses::Confusion census(const RgbImage& img) {
  losses::Confusion c;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto p = img.at(x, y);
      if (p == kTruePositive) ++c.tp;
      else if (p == kFalsePositive) ++c.fp;
      else if (p == kFalseNegative) ++c.fn;
      else ++c.tn;
    }
  return c;
}

}  // namespace peci::overlay
