#include <gtest/gtest.h>

#include <random>

#include "peci/gradcam.hpp"
#include "peci/overlay.hpp"
#include "peci/synth.hpp"

using namespace peci;
using namespace peci::gradcam;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

cin::CinConfig tiny_model(int stages = 1) {
  cin::CinConfig c;
  c.num_stages = stages;
  c.input_size = 16;
  c.width = 16;
  c.depth = 1;
  c.heads = 2;
  c.mlp_hidden = 32;
  c.seed = 5;
  return c;
}

data::Dataset tiny_data(int n = 3) {
  synth::SynthParams p;
  p.size = 16;
  return synth::generate(n, 1, 2, p);
}

Heatmap uniform_map(int w, int h, double v) { return {w, h, std::vector<double>(static_cast<std::size_t>(w) * h, v)}; }

}  // namespace

TEST(GradCam, ZeroDecoderGivesZeroMap) {
  cin::CinModel<double> model(tiny_model());
  model.stage(0).zero_decoder();
  auto ds = tiny_data(1);
  for (int b = 1; b <= kNumBlocks; ++b) {
    auto hm = gradcam_map(model, ds[0], Region::Bolus, b);
    EXPECT_EQ(hm.max(), 0.0) << b;
  }
}

TEST(GradCam, NormalizedAndFullSize) {
  cin::CinModel<double> model(tiny_model(2));
  auto ds = tiny_data(2);
  for (const auto& s : ds) {
    for (auto target : {Target::FullMap, Target::GtMasked}) {
      for (int b = 1; b <= kNumBlocks; ++b) {
        auto hm = gradcam_map(model, s, Region::Bolus, b, {target, -1});
        ASSERT_EQ(hm.width, 16);
        ASSERT_EQ(hm.height, 16);
        ASSERT_EQ(hm.values.size(), 256u);
        for (double v : hm.values) {
          EXPECT_GE(v, 0.0);
          EXPECT_LE(v, 1.0);
        }
        EXPECT_TRUE(hm.max() == 0.0 || std::abs(hm.max() - 1.0) < 1e-12);
      }
    }
  }
}

TEST(GradCam, BlockOutOfRange) {
  cin::CinModel<double> model(tiny_model());
  auto ds = tiny_data(1);
  EXPECT_EQ(code_of([&] { gradcam_map(model, ds[0], Region::Bolus, 0); }), ErrorCode::BlockOutOfRange);
  EXPECT_EQ(code_of([&] { gradcam_map(model, ds[0], Region::Bolus, 5); }), ErrorCode::BlockOutOfRange);
}

TEST(GradCam, LeavesParametersUntouched) {
  cin::CinModel<double> model(tiny_model());
  auto ds = tiny_data(1);
  const auto params = model.parameters();
  std::vector<std::vector<double>> before;
  for (const auto& it : params.items()) before.emplace_back(it.tensor.values().begin(), it.tensor.values().end());
  gradcam_map(model, ds[0], Region::Bolus, 2);
  for (std::size_t i = 0; i < before.size(); ++i) {
    auto v = params.items()[i].tensor.values();
    EXPECT_TRUE(std::equal(v.begin(), v.end(), before[i].begin())) << params.items()[i].name;
  }
}

TEST(GradCam, ResizeMatchesUpsampleOp) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1, 1);
  nn::Tensor<double> t({1, 1, 5, 7});
  for (auto& v : t.values()) v = u(rng);
  std::vector<double> src(t.values().begin(), t.values().end());
  auto up = nn::upsample_bilinear2x<double>(nullptr, t);
  auto mine = resize_bilinear(src, 7, 5, 14, 10);
  ASSERT_EQ(mine.size(), up.numel());
  for (std::size_t i = 0; i < mine.size(); ++i) EXPECT_NEAR(mine[i], up[i], 1e-12);
  auto same = resize_bilinear(src, 7, 5, 7, 5);
  for (std::size_t i = 0; i < src.size(); ++i) EXPECT_NEAR(same[i], src[i], 1e-12);
}

TEST(RegionImportance, UniformHeatTiesEveryPresentRegion) {
  auto ds = tiny_data(1);
  auto ranking = rank_regions({{uniform_map(16, 16, 0.7)}}, {&ds[0].masks});
  ASSERT_EQ(ranking.size(), static_cast<std::size_t>(kNumRegions));
  for (const auto& r : ranking) {
    if (ds[0].masks.count(index_of(r.region)) > 0) {
      EXPECT_NEAR(r.importance, 0.7, 1e-12) << key_of(r.region);
    }
  }
}

TEST(RegionImportance, AreaDoesNotMatter) {
  auto ds = tiny_data(1);
  const auto& m = ds[0].masks;
  // Heat exactly on the mandible: it must outrank the far larger soft tissue.
  Heatmap hm = uniform_map(16, 16, 0.0);
  for (std::size_t j = 0; j < hm.values.size(); ++j) hm.values[j] = m.channel(index_of(Region::Mandible))[j];
  ASSERT_GT(m.count(index_of(Region::SoftTissue)), m.count(index_of(Region::Mandible)));
  auto r = rank_regions({{hm}}, {&m});
  EXPECT_EQ(r.front().region, Region::Mandible);
  EXPECT_DOUBLE_EQ(r.front().importance, 1.0);
}

TEST(RegionImportance, DeterministicAndEmpty) {
  cin::CinModel<double> model(tiny_model());
  auto ds = tiny_data(2);
  auto a = region_importance(model, ds);
  auto b = region_importance(model, ds);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].region, b[i].region);
    EXPECT_EQ(a[i].importance, b[i].importance);
  }
  for (std::size_t i = 1; i < a.size(); ++i) EXPECT_GE(a[i - 1].importance, a[i].importance);
  EXPECT_EQ(code_of([&] { region_importance(model, data::Dataset{}); }), ErrorCode::EmptyDataset);
}

TEST(Ramp, RedIsHighest) {
  auto hi = ramp(1.0), lo = ramp(0.0);
  EXPECT_GT(hi[0], 200);
  EXPECT_LT(hi[2], 20);
  EXPECT_GT(lo[2], hi[2]);
  EXPECT_EQ(ramp(2.0), hi);
}

// --- overlays ---------------------------------------------------------------

TEST(Overlay, PerfectPredictionIsBlueAndGray) {
  auto ds = tiny_data(1);
  const auto& s = ds[0];
  auto img = overlay::render(s.image, s.masks, s.masks, Region::Mandible);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const auto p = img.at(x, y);
      if (s.masks.at(Region::Mandible, x, y)) {
        EXPECT_EQ(p, overlay::kTruePositive);
      } else {
        EXPECT_EQ(p[0], p[1]);
        EXPECT_EQ(p[1], p[2]);
      }
    }
}

TEST(Overlay, AllPositiveEmptyTruthIsGreen) {
  GrayImage frame(5, 4, 90);
  MaskSet pred(5, 4), truth(5, 4);
  std::fill(pred.data.begin(), pred.data.end(), 1);
  auto img = overlay::render(frame, pred, truth, Region::Bolus);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) EXPECT_EQ(img.at(x, y), overlay::kFalsePositive);
}

TEST(Overlay, CensusMatchesConfusion) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int w = 1 + static_cast<int>(rng() % 20), h = 1 + static_cast<int>(rng() % 20);
    GrayImage frame(w, h);
    for (auto& v : frame.pixels()) v = static_cast<std::uint8_t>(rng());
    std::vector<std::uint8_t> p(frame.size()), t(frame.size());
    for (auto& v : p) v = rng() & 1;
    for (auto& v : t) v = rng() & 1;
    auto img = overlay::render(frame, p.data(), t.data());
    EXPECT_EQ(overlay::census(img), losses::confusion_counts(p, t));
  }
}
