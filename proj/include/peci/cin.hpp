#pragma once

// Cascaded inference network. Each stage is a TransUNet-style encoder /
// transformer / decoder; stage i >= 2 sees x_bar concatenated with the
// selected logit channels of stage i-1.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "peci/losses.hpp"
#include "peci/masks.hpp"
#include "peci/nn/layers.hpp"
#include "peci/pen.hpp"
#include "peci/regions.hpp"

namespace peci::cin {

enum class Backbone { Full, Mini };

inline std::string to_string(Backbone b) { return b == Backbone::Full ? "full" : "mini"; }
inline Backbone backbone_from_string(const std::string& s) {
  if (s == "full") return Backbone::Full;
  if (s == "mini") return Backbone::Mini;
  fail(ErrorCode::ConfigInvalid, "unknown backbone '" + s + "'");
}

struct StageConfig {
  Backbone backbone = Backbone::Mini;
  int in_channels = 3;
  int out_channels = kNumRegions;
  int input_size = 64;
  int width = 64;
  int depth = 2;
  int heads = 4;
  int mlp_hidden = 128;

  static StageConfig full(int in_channels) {
    return {Backbone::Full, in_channels, kNumRegions, 224, 768, 12, 12, 3072};
  }
  static StageConfig mini(int in_channels) { return {Backbone::Mini, in_channels, kNumRegions, 64, 64, 2, 4, 128}; }

  /// Encoder output stride: tokens live on an (input_size / stride)^2 grid.
  int token_stride() const { return backbone == Backbone::Full ? 16 : 8; }
  int token_grid() const { return input_size / token_stride(); }

  void validate() const {
    if (in_channels < 1 || out_channels < 1) fail(ErrorCode::ConfigInvalid, "stage channel counts must be positive");
    if (input_size < token_stride() || input_size % token_stride() != 0) {
      fail(ErrorCode::ConfigInvalid, "input size " + std::to_string(input_size) + " must be a multiple of " +
                                         std::to_string(token_stride()));
    }
    if (depth < 0 || mlp_hidden < 1 || width < 1) fail(ErrorCode::ConfigInvalid, "bad transformer dimensions");
    if (heads < 1 || width % heads != 0) {
      fail(ErrorCode::HeadsDontDivide, "width " + std::to_string(width) + " / heads " + std::to_string(heads));
    }
  }
};

inline std::vector<int> default_context() {
  return {index_of(Region::CervicalSpine), index_of(Region::Mandible)};
}

struct CinConfig {
  Backbone backbone = Backbone::Mini;
  int num_stages = 2;
  /// T'_1..T'_{S-1}; empty means "default for every transition".
  std::vector<std::vector<int>> context;
  int input_size = 64;
  /// Mini-preset transformer overrides (ignored by the full preset).
  int width = 64;
  int depth = 2;
  int heads = 4;
  int mlp_hidden = 128;
  std::uint64_t seed = 0;
  pen::PenConfig pen;

  std::vector<int> context_for(int transition) const {
    if (context.empty()) return default_context();
    return context.at(transition);
  }

  StageConfig stage_config(int stage) const {
    const int extra = stage == 0 ? 0 : static_cast<int>(context_for(stage - 1).size());
    StageConfig s = backbone == Backbone::Full ? StageConfig::full(pen::kPenOutChannels + extra)
                                                : StageConfig::mini(pen::kPenOutChannels + extra);
    s.input_size = input_size;
    if (backbone == Backbone::Mini) {
      s.width = width;
      s.depth = depth;
      s.heads = heads;
      s.mlp_hidden = mlp_hidden;
    }
    return s;
  }

  void validate() const {
    if (num_stages < 1) fail(ErrorCode::ConfigInvalid, "need at least one stage");
    if (!context.empty() && static_cast<int>(context.size()) != num_stages - 1) {
      fail(ErrorCode::ConfigInvalid, "expected " + std::to_string(num_stages - 1) + " context sets, got " +
                                         std::to_string(context.size()));
    }
    for (int i = 0; i + 1 < num_stages; ++i) {
      const auto ctx = context_for(i);
      if (ctx.empty()) fail(ErrorCode::ConfigInvalid, "context set T'_" + std::to_string(i + 1) + " is empty");
      for (std::size_t a = 0; a < ctx.size(); ++a) {
        if (ctx[a] < 0 || ctx[a] >= kNumRegions) fail(ErrorCode::ConfigInvalid, "context region out of range");
        for (std::size_t b = 0; b < a; ++b) {
          if (ctx[a] == ctx[b]) fail(ErrorCode::ConfigInvalid, "duplicate region in context set");
        }
      }
    }
    pen.validate();
    for (int i = 0; i < num_stages; ++i) stage_config(i).validate();
  }
};

// ---------------------------------------------------------------------------
// Encoders

template <class T>
struct Bottleneck {
  nn::ConvBnRelu<T> reduce, spatial;
  nn::Conv2d<T> expand;
  nn::BatchNorm2d<T> expand_bn;
  std::optional<nn::Conv2d<T>> shortcut;
  std::optional<nn::BatchNorm2d<T>> shortcut_bn;

  Bottleneck(int in, int mid, int stride, nn::Rng& rng)
      : reduce(in, mid, 1, 1, rng), spatial(mid, mid, 3, stride, rng), expand(mid, 4 * mid, 1, 1, rng, false),
        expand_bn(4 * mid) {
    if (stride != 1 || in != 4 * mid) {
      shortcut.emplace(in, 4 * mid, 1, stride, rng, false);
      shortcut_bn.emplace(4 * mid);
    }
  }

  nn::Tensor<T> operator()(const nn::Context<T>& ctx, const nn::Tensor<T>& x) const {
    auto y = expand_bn(ctx, expand(ctx, spatial(ctx, reduce(ctx, x))));
    auto identity = shortcut ? (*shortcut_bn)(ctx, (*shortcut)(ctx, x)) : x;
    return nn::relu(ctx.tape, nn::add(ctx.tape, y, identity));
  }
  void collect(nn::ParamList<T>& out, const std::string& prefix) const {
    reduce.collect(out, prefix + ".reduce");
    spatial.collect(out, prefix + ".spatial");
    expand.collect(out, prefix + ".expand");
    expand_bn.collect(out, prefix + ".expand_bn");
    if (shortcut) {
      shortcut->collect(out, prefix + ".shortcut");
      shortcut_bn->collect(out, prefix + ".shortcut_bn");
    }
  }
};

/// Encoder result: the token-resolution feature map plus skip features
/// ordered coarse to fine (one per decoder up-block; undefined = no skip).
template <class T>
struct EncoderOutput {
  nn::Tensor<T> features;
  std::vector<nn::Tensor<T>> skips;
};

/// ResNet-50 layout through layer3: stem 7x7/2 + maxpool, then (3, 4, 6)
/// bottlenecks giving 1/4, 1/8 and 1/16 resolution features.
template <class T>
struct ResNetEncoder {
  nn::ConvBnRelu<T> stem;
  std::vector<std::vector<Bottleneck<T>>> layers;

  ResNetEncoder(int in, nn::Rng& rng) : stem(in, 64, 7, 2, rng) {
    const int blocks[3] = {3, 4, 6};
    const int mids[3] = {64, 128, 256};
    int channels = 64;
    for (int l = 0; l < 3; ++l) {
      std::vector<Bottleneck<T>> layer;
      for (int b = 0; b < blocks[l]; ++b) {
        layer.emplace_back(channels, mids[l], (b == 0 && l > 0) ? 2 : 1, rng);
        channels = 4 * mids[l];
      }
      layers.push_back(std::move(layer));
    }
  }
  static constexpr int out_channels() { return 1024; }
  static std::vector<int> skip_channels(int /*in*/) { return {512, 256, 64, 0}; }

  EncoderOutput<T> operator()(const nn::Context<T>& ctx, const nn::Tensor<T>& x) const {
    auto s0 = stem(ctx, x);
    auto h = nn::maxpool2d(ctx.tape, s0, 3, 2, 1);
    std::vector<nn::Tensor<T>> feats;
    for (const auto& layer : layers) {
      for (const auto& block : layer) h = block(ctx, h);
      feats.push_back(h);
    }
    return {feats[2], {feats[1], feats[0], s0, nn::Tensor<T>{}}};
  }
  void collect(nn::ParamList<T>& out, const std::string& prefix) const {
    stem.collect(out, prefix + ".stem");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      for (std::size_t b = 0; b < layers[l].size(); ++b) {
        layers[l][b].collect(out, prefix + ".layer" + std::to_string(l + 1) + "." + std::to_string(b));
      }
    }
  }
};

/// Three stride-2 conv levels (16, 32, 64 channels). The last decoder block
/// also receives the raw stage input as a full-resolution skip.
template <class T>
struct MiniEncoder {
  std::vector<nn::ConvBnRelu<T>> levels;

  MiniEncoder(int in, nn::Rng& rng) {
    levels.emplace_back(in, 16, 3, 2, rng);
    levels.emplace_back(16, 32, 3, 2, rng);
    levels.emplace_back(32, 64, 3, 2, rng);
  }
  static constexpr int out_channels() { return 64; }
  static std::vector<int> skip_channels(int in) { return {32, 16, in}; }

  EncoderOutput<T> operator()(const nn::Context<T>& ctx, const nn::Tensor<T>& x) const {
    auto l1 = levels[0](ctx, x);
    auto l2 = levels[1](ctx, l1);
    auto l3 = levels[2](ctx, l2);
    return {l3, {l2, l1, x}};
  }
  void collect(nn::ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < levels.size(); ++i) levels[i].collect(out, prefix + ".down" + std::to_string(i + 1));
  }
};

// ---------------------------------------------------------------------------
// Stage

template <class T>
struct StageOutput {
  nn::Tensor<T> logits;                // [B, 6, H, W]
  std::vector<nn::Tensor<T>> decoder;  // the four decoder block activations, coarse to fine
};

template <class T>
class Stage {
 public:
  Stage(const StageConfig& cfg, nn::Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    std::vector<int> skips;
    std::vector<int> widths;
    int enc_out = 0;
    int more = 0;
    if (cfg_.backbone == Backbone::Full) {
      resnet_.emplace(cfg_.in_channels, rng);
      enc_out = ResNetEncoder<T>::out_channels();
      skips = ResNetEncoder<T>::skip_channels(cfg_.in_channels);
      more = 512;
      widths = {256, 128, 64, 16};
    } else {
      mini_.emplace(cfg_.in_channels, rng);
      enc_out = MiniEncoder<T>::out_channels();
      skips = MiniEncoder<T>::skip_channels(cfg_.in_channels);
      more = 64;
      widths = {32, 16, 16};
    }
    const int grid = cfg_.token_grid();
    patch_embed_ = nn::Conv2d<T>(enc_out, cfg_.width, 1, 1, rng);
    pos_embed_ = nn::param<T>({1, grid * grid, cfg_.width});
    nn::fill_normal(pos_embed_, 0.02, rng);
    for (int i = 0; i < cfg_.depth; ++i) blocks_.emplace_back(cfg_.width, cfg_.heads, cfg_.mlp_hidden, rng);
    norm_ = nn::LayerNorm<T>(cfg_.width);
    conv_more_ = nn::ConvBnRelu<T>(cfg_.width, more, 3, 1, rng);
    int ch = more;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      up_.emplace_back(ch + skips[i], widths[i], 3, 1, rng);
      ch = widths[i];
    }
    head_ = nn::Conv2d<T>(ch, cfg_.out_channels, 3, 1, rng);
  }

  const StageConfig& config() const { return cfg_; }
  int in_channels() const { return cfg_.in_channels; }

  StageOutput<T> forward(const nn::Context<T>& ctx, const nn::Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != cfg_.in_channels || x.dim(2) != cfg_.input_size ||
        x.dim(3) != cfg_.input_size) {
      fail(ErrorCode::ShapeMismatch, "stage expects [B," + std::to_string(cfg_.in_channels) + "," +
                                         std::to_string(cfg_.input_size) + "," + std::to_string(cfg_.input_size) +
                                         "], got " + nn::shape_str(x.shape()));
    }
    auto enc = resnet_ ? (*resnet_)(ctx, x) : (*mini_)(ctx, x);
    const int grid = cfg_.token_grid();
    auto tokens = nn::to_tokens(ctx.tape, patch_embed_(ctx, enc.features));
    tokens = nn::add(ctx.tape, tokens, pos_embed_);
    for (const auto& block : blocks_) tokens = block(ctx, tokens);
    tokens = norm_(ctx, tokens);
    auto h = nn::from_tokens(ctx.tape, tokens, grid, grid);

    std::vector<nn::Tensor<T>> acts;
    h = conv_more_(ctx, h);
    acts.push_back(h);
    for (std::size_t i = 0; i < up_.size(); ++i) {
      h = nn::upsample_bilinear2x(ctx.tape, h);
      if (enc.skips[i].defined()) h = nn::concat_channels(ctx.tape, std::vector<nn::Tensor<T>>{h, enc.skips[i]});
      h = up_[i](ctx, h);
      acts.push_back(h);
    }
    StageOutput<T> out;
    out.logits = head_(ctx, h);
    // The four decoder blocks are the last four conv-BN-ReLU outputs.
    out.decoder.assign(acts.end() - 4, acts.end());
    return out;
  }

  /// Zeroes the logit head (weights and bias).
  void zero_head() {
    for (auto& v : head_.weight.values()) v = T(0);
    for (auto& v : head_.bias.values()) v = T(0);
  }

  /// Zeroes every decoder conv weight (conv_more, up-blocks and head).
  void zero_decoder() {
    auto clear = [](nn::Tensor<T>& t) {
      for (auto& v : t.values()) v = T(0);
    };
    clear(conv_more_.conv.weight);
    for (auto& b : up_) clear(b.conv.weight);
    zero_head();
  }

  void collect(nn::ParamList<T>& out, const std::string& prefix) const {
    if (resnet_) resnet_->collect(out, prefix + ".encoder");
    if (mini_) mini_->collect(out, prefix + ".encoder");
    patch_embed_.collect(out, prefix + ".patch_embed");
    out.add(prefix + ".pos_embed", pos_embed_);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
    norm_.collect(out, prefix + ".norm");
    conv_more_.collect(out, prefix + ".decoder.conv_more");
    for (std::size_t i = 0; i < up_.size(); ++i) up_[i].collect(out, prefix + ".decoder.up" + std::to_string(i + 1));
    head_.collect(out, prefix + ".head");
  }

 private:
  StageConfig cfg_;
  std::optional<ResNetEncoder<T>> resnet_;
  std::optional<MiniEncoder<T>> mini_;
  nn::Conv2d<T> patch_embed_;
  nn::Tensor<T> pos_embed_;
  std::vector<nn::TransformerBlock<T>> blocks_;
  nn::LayerNorm<T> norm_;
  nn::ConvBnRelu<T> conv_more_;
  std::vector<nn::ConvBnRelu<T>> up_;
  nn::Conv2d<T> head_;
};

// ---------------------------------------------------------------------------
// Cascade

template <class T>
struct StageResult {
  nn::Tensor<T> input;   // what the stage consumed
  nn::Tensor<T> logits;  // a_hat_i
  nn::Tensor<T> probs;   // y_hat_i = sigmoid(a_hat_i)
  std::vector<nn::Tensor<T>> decoder;
};

/// Test hook: sees a copy of stage `i`'s logits before its context channels
/// are selected for stage i+1, and may modify that copy.
template <class T>
using ContextHook = std::function<void(int stage, nn::Tensor<T>& logits)>;

template <class T>
class CinModel {
 public:
  explicit CinModel(const CinConfig& config) : config_(config) {
    config_.validate();
    nn::Rng rng(config_.seed);
    if (config_.pen.mode == pen::PenMode::Learned) pen_ = pen::pen_init<T>(config_.pen, rng());
    for (int i = 0; i < config_.num_stages; ++i) stages_.emplace_back(config_.stage_config(i), rng);
  }

  const CinConfig& config() const { return config_; }
  int num_stages() const { return static_cast<int>(stages_.size()); }
  const Stage<T>& stage(int i) const { return stages_.at(i); }
  Stage<T>& stage(int i) { return stages_.at(i); }
  const std::optional<pen::PenWeights<T>>& pen_weights() const { return pen_; }

  /// x_bar for a [B,N,H,W] batch of pipeline stacks.
  nn::Tensor<T> enhance(const nn::Context<T>& ctx, const nn::Tensor<T>& stack) const {
    if (pen_) return pen::pen_forward(ctx.tape, stack, *pen_);
    return pen::replicate_gray(ctx.tape, stack);
  }

  std::vector<StageResult<T>> forward(const nn::Context<T>& ctx, const nn::Tensor<T>& stack,
                                      const ContextHook<T>& hook = {}) const {
    return forward_enhanced(ctx, enhance(ctx, stack), hook);
  }

  std::vector<StageResult<T>> forward_enhanced(const nn::Context<T>& ctx, const nn::Tensor<T>& xbar,
                                               const ContextHook<T>& hook = {}) const {
    std::vector<StageResult<T>> results;
    nn::Tensor<T> input = xbar;
    for (int i = 0; i < num_stages(); ++i) {
      if (i > 0) {
        nn::Tensor<T> prev = results.back().logits;
        if (hook) {
          prev = prev.clone();
          hook(i - 1, prev);
        }
        auto context = nn::select_channels(ctx.tape, prev, config_.context_for(i - 1));
        input = nn::concat_channels(ctx.tape, std::vector<nn::Tensor<T>>{xbar, context});
      }
      auto out = stages_[i].forward(ctx, input);
      StageResult<T> r;
      r.input = input;
      r.logits = out.logits;
      r.probs = nn::sigmoid(ctx.tape, out.logits);
      r.decoder = std::move(out.decoder);
      results.push_back(std::move(r));
    }
    return results;
  }

  nn::ParamList<T> parameters() const {
    nn::ParamList<T> out;
    if (pen_) pen_->collect(out, "pen");
    for (int i = 0; i < num_stages(); ++i) stages_[i].collect(out, "stage" + std::to_string(i + 1));
    return out;
  }

  std::vector<nn::Tensor<T>> pen_parameters() const {
    std::vector<nn::Tensor<T>> out;
    if (pen_) out = {pen_->weight, pen_->bias};
    return out;
  }

 private:
  CinConfig config_;
  std::optional<pen::PenWeights<T>> pen_;
  std::vector<Stage<T>> stages_;
};

template <class T>
CinModel<T> build_model(const CinConfig& config) {
  return CinModel<T>(config);
}

// ---------------------------------------------------------------------------
// Prediction

template <class T>
struct Prediction {
  MaskSet masks;
  nn::Tensor<T> probs;  // [6, H, W], final stage
};

/// Final-stage prediction for one precomputed [N,H,W] pipeline stack.
template <class T>
Prediction<T> predict_stack(const CinModel<T>& model, const nn::Tensor<T>& stack, double theta = 0.5) {
  nn::Context<T> ctx{nullptr, false};
  auto batch = pen::make_batch<T>({stack});
  auto results = model.forward(ctx, batch);
  const auto& probs = results.back().probs;
  Prediction<T> p;
  p.probs = nn::Tensor<T>({probs.dim(1), probs.dim(2), probs.dim(3)}, std::vector<T>(probs.values().begin(),
                                                                                       probs.values().end()));
  p.masks = losses::threshold_maskset<T>(p.probs.values(), probs.dim(3), probs.dim(2), theta);
  return p;
}

template <class T>
Prediction<T> predict(const CinModel<T>& model, const GrayImage& img, double theta = 0.5) {
  return predict_stack(model, pen::pen_apply_algorithms<T>(img, model.config().pen), theta);
}

}  // namespace peci::cin
