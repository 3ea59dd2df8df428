#pragma once

// Dice-based training losses and the hard evaluation metrics.

#include <cstdint>
#include <span>
#include <vector>

#include "peci/masks.hpp"
#include "peci/nn/ops.hpp"
#include "peci/regions.hpp"

namespace peci::losses {

inline constexpr double kDiceEpsilon = 1e-6;

/// w[i][t]: weight of region t in stage i's loss.
struct LossWeights {
  std::vector<std::vector<double>> w;

  /// Intermediate stages weigh every region 1.0; the final stage weighs the
  /// bolus 2.5 and every other region 0.7.
  static LossWeights defaults(int num_stages) {
    LossWeights lw;
    for (int i = 0; i < num_stages; ++i) {
      std::vector<double> row(kNumRegions, 1.0);
      if (i == num_stages - 1) {
        row.assign(kNumRegions, 0.7);
        row[index_of(Region::Bolus)] = 2.5;
      }
      lw.w.push_back(std::move(row));
    }
    return lw;
  }

  void validate(int num_stages) const {
    if (static_cast<int>(w.size()) != num_stages) {
      fail(ErrorCode::ConfigInvalid, "loss weights cover " + std::to_string(w.size()) + " stages, model has " +
                                         std::to_string(num_stages));
    }
    for (const auto& row : w) {
      if (row.size() != static_cast<std::size_t>(kNumRegions)) {
        fail(ErrorCode::ConfigInvalid, "loss weights need one value per region");
      }
      for (double v : row) {
        if (!(v >= 0.0)) fail(ErrorCode::ConfigInvalid, "loss weights must be non-negative");
      }
    }
  }
};

/// Converts a batch of mask sets into a [B,6,H,W] tensor of 0/1 values.
template <class T>
nn::Tensor<T> masks_to_tensor(const std::vector<const MaskSet*>& masks) {
  if (masks.empty()) fail(ErrorCode::EmptyDataset, "no masks");
  const int w = masks[0]->width, h = masks[0]->height;
  nn::Tensor<T> t({static_cast<int>(masks.size()), kNumRegions, h, w});
  const std::size_t len = masks[0]->data.size();
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i]->width != w || masks[i]->height != h) fail(ErrorCode::ShapeMismatch, "mask sizes differ in batch");
    for (std::size_t j = 0; j < len; ++j) t[i * len + j] = static_cast<T>(masks[i]->data[j]);
  }
  return t;
}

/// (1/B) sum_b sum_t w_t * (1 - (2 sum(p y) + eps) / (sum p + sum y + eps))
/// over probs/targets of shape [B,C,H,W]. Differentiable w.r.t. probs.
template <class T>
nn::Tensor<T> weighted_dice_loss(nn::Tape<T>* tape, const nn::Tensor<T>& probs, const nn::Tensor<T>& targets,
                                 const std::vector<double>& weights) {
  if (probs.shape() != targets.shape() || probs.rank() != 4) {
    fail(ErrorCode::ShapeMismatch, "dice loss: probs " + nn::shape_str(probs.shape()) + " vs targets " +
                                       nn::shape_str(targets.shape()));
  }
  const int b = probs.dim(0), c = probs.dim(1);
  if (weights.size() != static_cast<std::size_t>(c)) fail(ErrorCode::ShapeMismatch, "dice loss: weight count");
  const std::size_t hw = static_cast<std::size_t>(probs.dim(2)) * probs.dim(3);
  const double eps = kDiceEpsilon;
  std::vector<double> inter(static_cast<std::size_t>(b) * c), denom(inter.size());
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    for (int t = 0; t < c; ++t) {
      const std::size_t k = static_cast<std::size_t>(i) * c + t;
      const T* p = probs.data() + k * hw;
      const T* y = targets.data() + k * hw;
      double sp = 0, sy = 0, spy = 0;
      for (std::size_t j = 0; j < hw; ++j) {
        sp += p[j];
        sy += y[j];
        spy += static_cast<double>(p[j]) * y[j];
      }
      inter[k] = 2.0 * spy + eps;
      denom[k] = sp + sy + eps;
      loss += weights[t] * (1.0 - inter[k] / denom[k]);
    }
  }
  const bool track = nn::tracks(tape, probs);
  nn::Tensor<T> out({1}, track);
  out[0] = static_cast<T>(loss / b);
  if (track) {
    tape->record([probs, targets, weights, inter, denom, out, b, c, hw]() mutable {
      const double g = static_cast<double>(out.grad()[0]) / b;
      T* dp = probs.grad_data();
      for (int i = 0; i < b; ++i) {
        for (int t = 0; t < c; ++t) {
          const std::size_t k = static_cast<std::size_t>(i) * c + t;
          if (weights[t] == 0.0) continue;
          const T* y = targets.data() + k * hw;
          // d/dp_j [-(I/D)] = -(2 y_j D - I) / D^2
          const double d2 = denom[k] * denom[k];
          const double scale = -g * weights[t];
          for (std::size_t j = 0; j < hw; ++j) {
            dp[k * hw + j] += static_cast<T>(scale * (2.0 * y[j] * denom[k] - inter[k]) / d2);
          }
        }
      }
    });
  }
  return out;
}

/// Dice loss of one probability map against one binary map (any equal shapes).
template <class T>
nn::Tensor<T> dice_loss(nn::Tape<T>* tape, const nn::Tensor<T>& probs, const nn::Tensor<T>& target) {
  if (probs.shape() != target.shape()) fail(ErrorCode::ShapeMismatch, "dice loss shape mismatch");
  const int n = static_cast<int>(probs.numel());
  // View both as [1,1,1,n]; reshaping copies so gradients are routed back explicitly.
  nn::Tensor<T> p4({1, 1, 1, n}, std::vector<T>(probs.values().begin(), probs.values().end()),
                   nn::tracks(tape, probs));
  nn::Tensor<T> y4({1, 1, 1, n}, std::vector<T>(target.values().begin(), target.values().end()));
  // Recorded first so that it replays after the loss backward.
  if (nn::tracks(tape, probs)) {
    tape->record([probs, p4]() mutable {
      auto g = p4.grad();
      auto d = probs.grad();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    });
  }
  return weighted_dice_loss(tape, p4, y4, {1.0});
}

template <class T>
nn::Tensor<T> stage_loss(nn::Tape<T>* tape, const nn::Tensor<T>& probs, const nn::Tensor<T>& targets,
                         const std::vector<double>& stage_weights) {
  return weighted_dice_loss(tape, probs, targets, stage_weights);
}

/// Sum of stage losses; every stage is supervised.
template <class T>
nn::Tensor<T> total_loss(nn::Tape<T>* tape, const std::vector<nn::Tensor<T>>& stage_probs,
                         const nn::Tensor<T>& targets, const LossWeights& weights) {
  weights.validate(static_cast<int>(stage_probs.size()));
  std::vector<nn::Tensor<T>> terms;
  for (std::size_t i = 0; i < stage_probs.size(); ++i) {
    terms.push_back(stage_loss(tape, stage_probs[i], targets, weights.w[i]));
  }
  return nn::add_scalars(tape, terms);
}

// ---------------------------------------------------------------------------
// Metrics

/// o_hat[j] = 1 iff probs[j] >= theta.
template <class T>
std::vector<std::uint8_t> threshold(std::span<const T> probs, double theta) {
  std::vector<std::uint8_t> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = static_cast<double>(probs[i]) >= theta ? 1 : 0;
  return out;
}

/// Thresholds a [6,H,W] probability map into a MaskSet.
template <class T>
MaskSet threshold_maskset(std::span<const T> probs, int width, int height, double theta) {
  MaskSet m(width, height);
  if (probs.size() != m.data.size()) fail(ErrorCode::ShapeMismatch, "threshold: probability map size mismatch");
  m.data = threshold(probs, theta);
  return m;
}

/// 2|A and B| / (|A| + |B|); two empty maps score 1.
inline double dice_score(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) fail(ErrorCode::ShapeMismatch, "dice score size mismatch");
  std::size_t inter = 0, sp = 0, st = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = truth[i] != 0;
    inter += p && t;
    sp += p;
    st += t;
  }
  if (sp + st == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sp + st);
}

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

enum class PixelClass : std::uint8_t { TruePositive, FalsePositive, TrueNegative, FalseNegative };

constexpr PixelClass classify(bool pred, bool truth) {
  if (pred) return truth ? PixelClass::TruePositive : PixelClass::FalsePositive;
  return truth ? PixelClass::FalseNegative : PixelClass::TrueNegative;
}

inline Confusion confusion_counts(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
  if (pred.size() != truth.size()) fail(ErrorCode::ShapeMismatch, "confusion size mismatch");
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    switch (classify(pred[i] != 0, truth[i] != 0)) {
      case PixelClass::TruePositive: ++c.tp; break;
      case PixelClass::FalsePositive: ++c.fp; break;
      case PixelClass::TrueNegative: ++c.tn; break;
      case PixelClass::FalseNegative: ++c.fn; break;
    }
  }
  return c;
}

/// Per-region Dice of one predicted mask set against ground truth.
inline std::vector<double> region_dice(const MaskSet& pred, const MaskSet& truth) {
  if (pred.width != truth.width || pred.height != truth.height) fail(ErrorCode::ShapeMismatch, "mask set sizes");
  std::vector<double> out;
  const std::size_t n = pred.plane_size();
  for (int t = 0; t < kNumRegions; ++t) {
    out.push_back(dice_score({pred.channel(t), n}, {truth.channel(t), n}));
  }
  return out;
}

}  // namespace peci::losses
