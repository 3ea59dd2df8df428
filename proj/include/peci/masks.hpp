#pragma once

#include <cstdint>
#include <vector>

#include "peci/error.hpp"
#include "peci/image.hpp"
#include "peci/regions.hpp"

namespace peci {

/// Six binary region maps (values 0/1), channel-major; channels may overlap.
struct MaskSet {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // kNumRegions * height * width

  MaskSet() = default;
  MaskSet(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(kNumRegions) * w * h, 0) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(width) * height; }
  std::uint8_t* channel(int t) { return data.data() + static_cast<std::size_t>(t) * plane_size(); }
  const std::uint8_t* channel(int t) const { return data.data() + static_cast<std::size_t>(t) * plane_size(); }
  std::uint8_t& at(int t, int x, int y) { return channel(t)[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int t, int x, int y) const { return channel(t)[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(Region r, int x, int y) { return at(index_of(r), x, y); }
  std::uint8_t at(Region r, int x, int y) const { return at(index_of(r), x, y); }

  std::size_t count(int t) const {
    std::size_t n = 0;
    const auto* p = channel(t);
    for (std::size_t i = 0; i < plane_size(); ++i) n += p[i];
    return n;
  }

  /// Channel t as a 0/255 image.
  GrayImage to_image(int t) const {
    GrayImage img(width, height);
    const auto* p = channel(t);
    for (std::size_t i = 0; i < plane_size(); ++i) img.pixels()[i] = p[i] ? 255 : 0;
    return img;
  }

  friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

}  // namespace peci
