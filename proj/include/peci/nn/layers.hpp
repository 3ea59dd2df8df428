#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "peci/nn/ops.hpp"

namespace peci::nn {

/// Named tensor as seen by the optimizer and the checkpoint writer.
/// Buffers (BN running statistics) are persisted but never optimized.
template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <class T>
class ParamList {
 public:
  void add(std::string name, Tensor<T> t, bool trainable = true) {
    items_.push_back({std::move(name), std::move(t), trainable});
  }
  const std::vector<NamedTensor<T>>& items() const { return items_; }
  std::vector<NamedTensor<T>>& items() { return items_; }

  std::vector<Tensor<T>> trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& it : items_) {
      if (it.trainable) out.push_back(it.tensor);
    }
    return out;
  }
  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& it : items_) n += it.trainable ? it.tensor.numel() : 0;
    return n;
  }

 private:
  std::vector<NamedTensor<T>> items_;
};

/// Forward-pass context: the tape (null for inference) and the BN mode.
template <class T>
struct Context {
  Tape<T>* tape = nullptr;
  bool training = false;
};

using Rng = std::mt19937_64;

template <class T>
void fill_normal(Tensor<T>& t, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

template <class T>
Tensor<T> param(Shape shape) {
  return Tensor<T>(std::move(shape), true);
}

template <class T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  /// He-normal weights (fan_in = in * k * k), zero bias. Padding is "same" at stride 1.
  Conv2d(int in, int out, int kernel, int stride_, Rng& rng, bool with_bias = true)
      : weight(param<T>({out, in, kernel, kernel})), stride(stride_), pad(kernel / 2) {
    fill_normal(weight, std::sqrt(2.0 / (static_cast<double>(in) * kernel * kernel)), rng);
    if (with_bias) bias = param<T>({out});
  }

  int in_channels() const { return weight.dim(1); }
  int out_channels() const { return weight.dim(0); }

  Tensor<T> operator()(const Context<T>& ctx, const Tensor<T>& x) const {
    return conv2d(ctx.tape, x, weight, bias, stride, pad);
  }
  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.add(prefix + ".weight", weight);
    if (bias.defined()) out.add(prefix + ".bias", bias);
  }
};

template <class T>
struct BatchNorm2d {
  Tensor<T> gamma, beta, running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels)
      : gamma(Tensor<T>::full({channels}, T(1), true)),
        beta(param<T>({channels})),
        running_mean(Tensor<T>({channels})),
        running_var(Tensor<T>::full({channels}, T(1))) {}

  Tensor<T> operator()(const Context<T>& ctx, const Tensor<T>& x) const {
    auto rm = running_mean;
    auto rv = running_var;
    return batchnorm2d(ctx.tape, x, gamma, beta, rm, rv, ctx.training, momentum, eps);
  }
  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.add(prefix + ".gamma", gamma);
    out.add(prefix + ".beta", beta);
    out.add(prefix + ".running_mean", running_mean, false);
    out.add(prefix + ".running_var", running_var, false);
  }
};

/// 3x3 conv (no bias) -> BN -> ReLU.
template <class T>
struct ConvBnRelu {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;

  ConvBnRelu() = default;
  ConvBnRelu(int in, int out, int kernel, int stride, Rng& rng)
      : conv(in, out, kernel, stride, rng, /*with_bias=*/false), bn(out) {}

  Tensor<T> operator()(const Context<T>& ctx, const Tensor<T>& x) const {
    return relu(ctx.tape, bn(ctx, conv(ctx, x)));
  }
  void collect(ParamList<T>& out, const std::string& prefix) const {
    conv.collect(out, prefix + ".conv");
    bn.collect(out, prefix + ".bn");
  }
};

template <class T>
struct Linear {
  Tensor<T> weight;  // [out, in]
  Tensor<T> bias;

  Linear() = default;
  /// Xavier-normal weights, zero bias.
  Linear(int in, int out, Rng& rng) : weight(param<T>({out, in})), bias(param<T>({out})) {
    fill_normal(weight, std::sqrt(2.0 / (in + out)), rng);
  }
  Tensor<T> operator()(const Context<T>& ctx, const Tensor<T>& x) const {
    return linear(ctx.tape, x, weight, bias);
  }
  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.add(prefix + ".weight", weight);
    out.add(prefix + ".bias", bias);
  }
};

template <class T>
struct LayerNorm {
  Tensor<T> gamma, beta;
  T eps = T(1e-6);

  LayerNorm() = default;
  explicit LayerNorm(int d) : gamma(Tensor<T>::full({d}, T(1), true)), beta(param<T>({d})) {}
  Tensor<T> operator()(const Context<T>& ctx, const Tensor<T>& x) const {
    return layer_norm(ctx.tape, x, gamma, beta, eps);
  }
  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.add(prefix + ".gamma", gamma);
    out.add(prefix + ".beta", beta);
  }
};

/// Pre-norm transformer encoder block:
///   x + MHSA(LN(x)), then + MLP(LN(.)) with a GELU hidden layer.
template <class T>
struct TransformerBlock {
  LayerNorm<T> ln1, ln2;
  Linear<T> q, k, v, proj, fc1, fc2;
  int heads = 1;

  TransformerBlock() = default;
  TransformerBlock(int width, int heads_, int mlp_hidden, Rng& rng)
      : ln1(width),
        ln2(width),
        q(width, width, rng),
        k(width, width, rng),
        v(width, width, rng),
        proj(width, width, rng),
        fc1(width, mlp_hidden, rng),
        fc2(mlp_hidden, width, rng),
        heads(heads_) {
    if (heads < 1 || width % heads != 0) {
      fail(ErrorCode::HeadsDontDivide, "width " + std::to_string(width) + " / heads " + std::to_string(heads));
    }
  }

  Tensor<T> operator()(const Context<T>& ctx, const Tensor<T>& x) const {
    if (x.rank() != 3 || x.dim(2) != ln1.gamma.dim(0)) {
      fail(ErrorCode::ShapeMismatch, "transformer block got " + shape_str(x.shape()));
    }
    auto h = ln1(ctx, x);
    auto att = attention(ctx.tape, q(ctx, h), k(ctx, h), v(ctx, h), heads);
    auto x1 = add(ctx.tape, x, proj(ctx, att));
    auto m = fc2(ctx, gelu(ctx.tape, fc1(ctx, ln2(ctx, x1))));
    return add(ctx.tape, x1, m);
  }
  void collect(ParamList<T>& out, const std::string& prefix) const {
    ln1.collect(out, prefix + ".ln1");
    q.collect(out, prefix + ".q");
    k.collect(out, prefix + ".k");
    v.collect(out, prefix + ".v");
    proj.collect(out, prefix + ".proj");
    ln2.collect(out, prefix + ".ln2");
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

}  // namespace peci::nn
