#pragma once

// GradCAM over the decoder blocks of a stage, and the region ranking built
// from it.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "peci/cin.hpp"
#include "peci/data.hpp"
#include "peci/image.hpp"

namespace peci::gradcam {

/// H x W map with values in [0,1], row-major.
struct Heatmap {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  double max() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
};

enum class Target {
  FullMap,   // sum of the region's logits over every pixel
  GtMasked,  // sum restricted to the region's ground-truth pixels
};

inline constexpr int kNumBlocks = 4;

struct Options {
  Target target = Target::FullMap;
  /// Stage to explain; -1 means the last one.
  int stage = -1;
};

/// Half-pixel bilinear resize with edge clamping.
inline std::vector<double> resize_bilinear(const std::vector<double>& src, int sw, int sh, int dw, int dh) {
  std::vector<double> out(static_cast<std::size_t>(dw) * dh);
  for (int y = 0; y < dh; ++y) {
    const double fy = std::clamp((y + 0.5) * sh / dh - 0.5, 0.0, sh - 1.0);
    const int y0 = static_cast<int>(fy), y1 = std::min(y0 + 1, sh - 1);
    const double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      const double fx = std::clamp((x + 0.5) * sw / dw - 0.5, 0.0, sw - 1.0);
      const int x0 = static_cast<int>(fx), x1 = std::min(x0 + 1, sw - 1);
      const double wx = fx - x0;
      auto s = [&](int xx, int yy) { return src[static_cast<std::size_t>(yy) * sw + xx]; };
      out[static_cast<std::size_t>(y) * dw + x] =
          (1 - wy) * ((1 - wx) * s(x0, y0) + wx * s(x1, y0)) + wy * ((1 - wx) * s(x0, y1) + wx * s(x1, y1));
    }
  }
  return out;
}

/// Maps for all four decoder blocks from one backward pass, index 0 = block 1.
template <class T>
std::array<Heatmap, kNumBlocks> gradcam_all(const cin::CinModel<T>& model, const nn::Tensor<T>& stack,
                                            Region target_region, const MaskSet* truth = nullptr,
                                            const Options& opt = {}) {
  const int stage = opt.stage < 0 ? model.num_stages() - 1 : opt.stage;
  if (stage >= model.num_stages()) fail(ErrorCode::IndexOutOfRange, "no stage " + std::to_string(stage));
  if (opt.target == Target::GtMasked && !truth) fail(ErrorCode::ConfigInvalid, "masked GradCAM target needs masks");
  nn::Tape<T> tape;
  // Eval-mode BN, but recorded so the decoder activations receive gradients.
  nn::Context<T> ctx{&tape, false};
  auto results = model.forward(ctx, pen::make_batch<T>({stack}));
  const auto& res = results[stage];
  const int h = res.logits.dim(2), w = res.logits.dim(3);
  auto channel = nn::select_channels(&tape, res.logits, {index_of(target_region)});
  if (opt.target == Target::GtMasked) {
    if (truth->width != w || truth->height != h) fail(ErrorCode::ShapeMismatch, "GradCAM mask size");
    nn::Tensor<T> m({1, 1, h, w});
    const auto* src = truth->channel(index_of(target_region));
    for (std::size_t i = 0; i < m.numel(); ++i) m[i] = static_cast<T>(src[i]);
    channel = nn::mul(&tape, channel, m);
  }
  auto score = nn::sum(&tape, channel);
  const auto& acts = res.decoder;
  for (const auto& a : acts) a.zero_grad();
  tape.backward(score);

  std::array<Heatmap, kNumBlocks> maps;
  for (int b = 0; b < kNumBlocks; ++b) {
    const auto& a = acts[b];
    const int k = a.dim(1), ah = a.dim(2), aw = a.dim(3);
    const std::size_t plane = static_cast<std::size_t>(ah) * aw;
    const auto g = a.grad();
    std::vector<double> cam(plane, 0.0);
    for (int c = 0; c < k; ++c) {
      double alpha = 0.0;
      for (std::size_t j = 0; j < plane; ++j) alpha += g[c * plane + j];
      alpha /= static_cast<double>(plane);
      if (alpha == 0.0) continue;
      for (std::size_t j = 0; j < plane; ++j) cam[j] += alpha * a[c * plane + j];
    }
    for (auto& v : cam) v = std::max(v, 0.0);
    Heatmap hm{w, h, resize_bilinear(cam, aw, ah, w, h)};
    const double mx = hm.max();
    for (auto& v : hm.values) v = mx > 0.0 ? std::clamp(v / mx, 0.0, 1.0) : 0.0;
    maps[b] = std::move(hm);
  }
  for (const auto& a : acts) a.drop_grad();
  return maps;
}

/// GradCAM for one decoder block, numbered 1 (coarsest) to 4 (finest).
template <class T>
Heatmap gradcam_map(const cin::CinModel<T>& model, const nn::Tensor<T>& stack, Region target_region, int block,
                    const MaskSet* truth = nullptr, const Options& opt = {}) {
  if (block < 1 || block > kNumBlocks) {
    fail(ErrorCode::BlockOutOfRange, "decoder block " + std::to_string(block) + " outside 1.." +
                                         std::to_string(kNumBlocks));
  }
  return gradcam_all(model, stack, target_region, truth, opt)[block - 1];
}

template <class T>
Heatmap gradcam_map(const cin::CinModel<T>& model, const data::Sample& sample, Region target_region, int block,
                    const Options& opt = {}) {
  if (block < 1 || block > kNumBlocks) {
    fail(ErrorCode::BlockOutOfRange, "decoder block " + std::to_string(block) + " outside 1.." +
                                         std::to_string(kNumBlocks));
  }
  return gradcam_map(model, pen::pen_apply_algorithms<T>(sample.image, model.config().pen), target_region, block,
                     &sample.masks, opt);
}

struct RegionScore {
  Region region;
  double importance;  // mean heat per pixel inside the region's ground truth
};

/// Mean heat per GT pixel of region t; -1 when the region is absent.
inline double mean_in_region(const Heatmap& hm, const MaskSet& truth, int t) {
  if (truth.width != hm.width || truth.height != hm.height) fail(ErrorCode::ShapeMismatch, "heatmap vs mask size");
  const auto* m = truth.channel(t);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t j = 0; j < hm.values.size(); ++j) {
    if (m[j]) s += hm.values[j], ++n;
  }
  return n ? s / static_cast<double>(n) : -1.0;
}

/// Ranking from precomputed heatmaps: per-region mean over every (image, block)
/// pair where the region is present; regions never present score 0.
inline std::vector<RegionScore> rank_regions(const std::vector<std::vector<Heatmap>>& maps,
                                             const std::vector<const MaskSet*>& truths) {
  if (maps.empty()) fail(ErrorCode::EmptyDataset, "no images to rank regions on");
  std::vector<RegionScore> out;
  for (int t = 0; t < kNumRegions; ++t) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      for (const auto& hm : maps[i]) {
        const double v = mean_in_region(hm, *truths[i], t);
        if (v >= 0.0) s += v, ++n;
      }
    }
    out.push_back({static_cast<Region>(t), n ? s / static_cast<double>(n) : 0.0});
  }
  std::stable_sort(out.begin(), out.end(), [](const RegionScore& a, const RegionScore& b) {
    return a.importance > b.importance;
  });
  return out;
}

/// Regions ranked by their average GradCAM mass for the target, all four blocks weighted equally.
template <class T>
std::vector<RegionScore> region_importance(const cin::CinModel<T>& model, const data::Dataset& dataset,
                                           Region target_region = Region::Bolus, const Options& opt = {}) {
  if (dataset.empty()) fail(ErrorCode::EmptyDataset, "no images to rank regions on");
  std::vector<std::vector<Heatmap>> maps;
  std::vector<const MaskSet*> truths;
  for (const auto& s : dataset) {
    const auto all = gradcam_all(model, pen::pen_apply_algorithms<T>(s.image, model.config().pen), target_region,
                                 &s.masks, opt);
    maps.emplace_back(all.begin(), all.end());
    truths.push_back(&s.masks);
  }
  return rank_regions(maps, truths);
}

/// Blue -> cyan -> green -> yellow -> red; red is the highest value.
inline std::array<std::uint8_t, 3> ramp(double v) {
  static constexpr std::array<std::array<double, 3>, 5> stops{
      {{0, 0, 160}, {0, 200, 255}, {40, 220, 40}, {255, 230, 0}, {220, 0, 0}}};
  v = std::clamp(v, 0.0, 1.0) * (stops.size() - 1);
  const int i = std::min(static_cast<int>(v), static_cast<int>(stops.size()) - 2);
  const double f = v - i;
  std::array<std::uint8_t, 3> c{};
  for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(std::lround(stops[i][k] * (1 - f) + stops[i + 1][k] * f));
  return c;
}

inline RgbImage colorize(const Heatmap& hm) {
  RgbImage out(hm.width, hm.height);
  for (int y = 0; y < hm.height; ++y)
    for (int x = 0; x < hm.width; ++x) {
      const auto c = ramp(hm.at(x, y));
      out.set(x, y, c[0], c[1], c[2]);
    }
  return out;
}

/// Heat blended over the grayscale frame.
inline RgbImage blend(const GrayImage& img, const Heatmap& hm, double alpha = 0.5) {
  if (img.width() != hm.width || img.height() != hm.height) fail(ErrorCode::ShapeMismatch, "heatmap vs image size");
  RgbImage out(hm.width, hm.height);
  for (int y = 0; y < hm.height; ++y)
    for (int x = 0; x < hm.width; ++x) {
      const auto c = ramp(hm.at(x, y));
      const double g = img(x, y);
      auto mix = [&](double v) { return static_cast<std::uint8_t>(std::lround((1 - alpha) * g + alpha * v)); };
      out.set(x, y, mix(c[0]), mix(c[1]), mix(c[2]));
    }
  return out;
}

}  // namespace peci::gradcam
