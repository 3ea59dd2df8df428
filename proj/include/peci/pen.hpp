#pragma once

// Preprocessing ensemble: N classical enhancement pipelines stacked into an
// N-channel map and fused to 3 channels by a learnable 7x7 conv + ReLU.

#include <cstdint>
#include <vector>

#include "peci/image.hpp"
#include "peci/imgproc.hpp"
#include "peci/nn/layers.hpp"

namespace peci::pen {

enum class PenMode {
  Learned,    // 7x7 conv + ReLU over the pipeline stack
  Replicate,  // no PEN: the gray image copied into 3 channels
};

struct PenConfig {
  std::vector<imgproc::PipelineSpec> pipelines = imgproc::default_pipelines();
  PenMode mode = PenMode::Learned;

  int num_inputs() const { return static_cast<int>(pipelines.size()); }

  void validate() const {
    if (pipelines.empty()) fail(ErrorCode::ConfigInvalid, "PEN needs at least one pipeline");
    for (const auto& p : pipelines) p.validate();
  }

  /// The configuration without PEN: identity input replicated to 3 channels.
  static PenConfig replicate() {
    PenConfig c;
    c.pipelines = {imgproc::PipelineSpec::parse("identity")};
    c.mode = PenMode::Replicate;
    return c;
  }
};

inline constexpr int kPenOutChannels = 3;
inline constexpr int kPenKernel = 7;

template <class T>
struct PenWeights {
  nn::Tensor<T> weight;  // [3, N, 7, 7]
  nn::Tensor<T> bias;    // [3]

  void collect(nn::ParamList<T>& out, const std::string& prefix) const {
    out.add(prefix + ".weight", weight);
    out.add(prefix + ".bias", bias);
  }
};

/// Runs every pipeline and returns the [N,H,W] stack scaled to [0,1].
template <class T>
nn::Tensor<T> pen_apply_algorithms(const GrayImage& img, const PenConfig& config) {
  config.validate();
  const int n = config.num_inputs();
  nn::Tensor<T> stack({n, img.height(), img.width()});
  const std::size_t plane = img.size();
  for (int i = 0; i < n; ++i) {
    const GrayImage out = imgproc::apply_pipeline(config.pipelines[i], img);
    T* dst = stack.data() + static_cast<std::size_t>(i) * plane;
    for (std::size_t j = 0; j < plane; ++j) dst[j] = static_cast<T>(out.pixels()[j]) / T(255);
  }
  return stack;
}

/// He-normal (fan_in = N * 49) weights and zero bias, reproducible from `seed`.
template <class T>
PenWeights<T> pen_init(const PenConfig& config, std::uint64_t seed) {
  nn::Rng rng(seed);
  nn::Conv2d<T> conv(config.num_inputs(), kPenOutChannels, kPenKernel, 1, rng);
  return {conv.weight, conv.bias};
}

/// x_bar = ReLU(Conv7x7(stack)) for a [B,N,H,W] batch of stacks.
template <class T>
nn::Tensor<T> pen_forward(nn::Tape<T>* tape, const nn::Tensor<T>& stack, const PenWeights<T>& weights) {
  if (stack.rank() != 4 || stack.dim(1) != weights.weight.dim(1)) {
    fail(ErrorCode::ShapeMismatch, "PEN expects " + std::to_string(weights.weight.dim(1)) + " input channels, got " +
                                       nn::shape_str(stack.shape()));
  }
  return nn::relu(tape, nn::conv2d(tape, stack, weights.weight, weights.bias, 1, kPenKernel / 2));
}

/// [B,1,H,W] -> [B,3,H,W] by copying the gray channel.
template <class T>
nn::Tensor<T> replicate_gray(nn::Tape<T>* tape, const nn::Tensor<T>& stack) {
  if (stack.rank() != 4 || stack.dim(1) < 1) fail(ErrorCode::ShapeMismatch, "replicate_gray expects [B,N,H,W]");
  auto gray = stack.dim(1) == 1 ? stack : nn::select_channels(tape, stack, {0});
  return nn::concat_channels(tape, std::vector<nn::Tensor<T>>{gray, gray, gray});
}

/// Stacks per-image [N,H,W] tensors into one [B,N,H,W] batch.
template <class T>
nn::Tensor<T> make_batch(const std::vector<nn::Tensor<T>>& items) {
  if (items.empty()) fail(ErrorCode::EmptyDataset, "empty batch");
  nn::Shape shape = items.front().shape();
  shape.insert(shape.begin(), static_cast<int>(items.size()));
  nn::Tensor<T> batch(shape);
  const std::size_t len = items.front().numel();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items.front().shape()) fail(ErrorCode::ShapeMismatch, "batch items differ in shape");
    std::copy(items[i].data(), items[i].data() + len, batch.data() + i * len);
  }
  return batch;
}

}  // namespace peci::pen
