#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles/gradcheck.hpp"
#include "peci/nn/layers.hpp"
#include "peci/nn/optim.hpp"

using namespace peci;
using namespace peci::nn;
using oracle::gradcheck;
using oracle::random_tensor;

namespace {

constexpr double kTol = 1e-4;
constexpr int kSeeds = 20;

// Weighted sum with a fixed random probe; makes every output coordinate matter.
Tensor<double> probe(Tape<double>* tape, const Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  auto r = random_tensor(y.shape(), rng, 1.0, false);
  return sum(tape, mul(tape, y, r));
}

template <class F>
void check_seeds(const char* what, F&& make, double tol = kTol) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    auto rep = make(static_cast<std::uint64_t>(seed));
    EXPECT_LE(rep.max_rel_err, tol) << what << " seed " << seed;
    EXPECT_GT(rep.checked, 0u);
  }
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::IoError;
}

}  // namespace

TEST(Tensor, SharedStorageAndClone) {
  Tensor<float> a({2, 3});
  auto b = a;
  b[0] = 5.0f;
  EXPECT_EQ(a[0], 5.0f);
  auto c = a.clone();
  c[0] = 1.0f;
  EXPECT_EQ(a[0], 5.0f);
  EXPECT_FALSE(c.same_storage(a));
  EXPECT_EQ(a.dim(-1), 3);
  EXPECT_EQ(code_of([&] { a.item(); }), ErrorCode::NotScalar);
  EXPECT_EQ(code_of([] { Tensor<float>({2, 2}, std::vector<float>(3)); }), ErrorCode::ShapeMismatch);
}

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({2, 3, 5, 6}, rng, 1.0, false);
  Tensor<double> w({3, 3, 1, 1});
  for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.0;
  auto y = conv2d<double>(nullptr, x, w, Tensor<double>(), 1, 0);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Conv2d, ZeroWeightsGiveBias) {
  std::mt19937_64 rng(2);
  auto x = random_tensor({1, 2, 7, 7}, rng, 1.0, false);
  Tensor<double> w({4, 2, 3, 3});
  Tensor<double> b({4}, {0.5, -1.0, 2.0, 3.25});
  auto y = conv2d<double>(nullptr, x, w, b, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 4, 7, 7}));
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 49; ++i) EXPECT_DOUBLE_EQ(y[c * 49 + i], b[c]);
}

TEST(Conv2d, SamePaddingAndStride) {
  std::mt19937_64 rng(3);
  for (int k : {1, 3, 7}) {
    auto x = random_tensor({1, 2, 9, 9}, rng, 1.0, false);
    auto w = random_tensor({3, 2, k, k}, rng, 1.0, false);
    EXPECT_EQ(conv2d<double>(nullptr, x, w, {}, 1, k / 2).shape(), (Shape{1, 3, 9, 9}));
    EXPECT_EQ(conv2d<double>(nullptr, x, w, {}, 2, k / 2).shape(), (Shape{1, 3, 5, 5}));
  }
  auto x = random_tensor({1, 2, 5, 5}, rng, 1.0, false);
  auto w = random_tensor({3, 4, 3, 3}, rng, 1.0, false);
  EXPECT_EQ(code_of([&] { conv2d<double>(nullptr, x, w, {}, 1, 1); }), ErrorCode::ShapeMismatch);
}

TEST(Conv2d, MatchesDirectLoop) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({2, 3, 6, 5}, rng, 1.0, false);
  auto w = random_tensor({4, 3, 3, 3}, rng, 1.0, false);
  auto b = random_tensor({4}, rng, 1.0, false);
  for (int stride : {1, 2}) {
    auto y = conv2d<double>(nullptr, x, w, b, stride, 1);
    const int oh = y.dim(2), ow = y.dim(3);
    for (int n = 0; n < 2; ++n)
      for (int o = 0; o < 4; ++o)
        for (int i = 0; i < oh; ++i)
          for (int j = 0; j < ow; ++j) {
            double acc = b[o];
            for (int c = 0; c < 3; ++c)
              for (int u = 0; u < 3; ++u)
                for (int v = 0; v < 3; ++v) {
                  const int yy = i * stride + u - 1, xx = j * stride + v - 1;
                  if (yy < 0 || yy >= 6 || xx < 0 || xx >= 5) continue;
                  acc += w[((o * 3 + c) * 3 + u) * 3 + v] * x[((n * 3 + c) * 6 + yy) * 5 + xx];
                }
            EXPECT_NEAR(y[((n * 4 + o) * oh + i) * ow + j], acc, 1e-12);
          }
  }
}

TEST(Conv2d, Gradcheck) {
  check_seeds("conv3x3", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor({2, 3, 8, 8}, rng);
    auto w = random_tensor({4, 3, 3, 3}, rng, 0.5);
    auto b = random_tensor({4}, rng);
    const int stride = seed % 2 ? 2 : 1;
    return gradcheck([&](Tape<double>* t) { return probe(t, conv2d(t, x, w, b, stride, 1), seed); }, {x, w, b},
                     1e-5, 60, seed);
  });
  check_seeds("conv1x1/7x7", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed + 100);
    const int k = seed % 2 ? 7 : 1;
    auto x = random_tensor({2, 2, 9, 9}, rng);
    auto w = random_tensor({3, 2, k, k}, rng, 0.3);
    auto b = random_tensor({3}, rng);
    return gradcheck([&](Tape<double>* t) { return probe(t, conv2d(t, x, w, b, 1, k / 2), seed); }, {x, w, b},
                     1e-5, 60, seed);
  });
}

TEST(BatchNorm, NormalizedInputPassesThrough) {
  // Per channel: values +-1 alternating -> mean 0, biased var 1.
  Tensor<double> x({2, 2, 2, 2});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = (i % 2) ? 1.0 : -1.0;
  auto g = Tensor<double>::full({2}, 1.0), b = Tensor<double>({2});
  Tensor<double> rm({2}), rv = Tensor<double>::full({2}, 1.0);
  auto y = batchnorm2d<double>(nullptr, x, g, b, rm, rv, true, 0.1, 0.0);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(y[i], x[i], 1e-6);
  // Running variance uses the unbiased estimate: 8/7.
  EXPECT_NEAR(rv[0], 0.9 + 0.1 * 8.0 / 7.0, 1e-12);
  EXPECT_NEAR(rm[0], 0.0, 1e-12);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({3, 2, 4, 4}, rng, 2.0, false);
  Tensor<double> g({2});
  Tensor<double> b({2}, std::vector<double>{0.25, -3.0});
  Tensor<double> rm({2}), rv = Tensor<double>::full({2}, 1.0);
  for (bool train : {true, false}) {
    auto y = batchnorm2d<double>(nullptr, x, g, b, rm, rv, train, 0.1, 1e-5);
    for (int n = 0; n < 3; ++n)
      for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(y[(n * 2 + c) * 16 + i], b[c]);
  }
}

TEST(BatchNorm, EvalUsesRunningStats) {
  Tensor<double> x({1, 1, 1, 2}, {3.0, 5.0});
  auto g = Tensor<double>::full({1}, 2.0), b = Tensor<double>::full({1}, 1.0);
  Tensor<double> rm({1}, std::vector<double>{1.0}), rv({1}, std::vector<double>{4.0});
  auto y = batchnorm2d<double>(nullptr, x, g, b, rm, rv, false, 0.1, 0.0);
  EXPECT_DOUBLE_EQ(y[0], 2.0 * (3.0 - 1.0) / 2.0 + 1.0);
  EXPECT_DOUBLE_EQ(y[1], 2.0 * (5.0 - 1.0) / 2.0 + 1.0);
  EXPECT_DOUBLE_EQ(rm[0], 1.0);
}

TEST(BatchNorm, Gradcheck) {
  check_seeds("batchnorm", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor({3, 2, 3, 4}, rng, 1.5);
    auto g = random_tensor({2}, rng);
    auto b = random_tensor({2}, rng);
    Tensor<double> rm({2}), rv = Tensor<double>::full({2}, 1.0);
    return gradcheck(
        [&](Tape<double>* t) { return probe(t, batchnorm2d<double>(t, x, g, b, rm, rv, true, 0.1, 1e-5), seed); },
        {x, g, b}, 1e-5, 0, seed);
  });
}

TEST(Activation, Values) {
  Tensor<double> x({3}, {-1.0, 0.0, 2.0}, true);
  auto y = relu<double>(nullptr, x);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
  EXPECT_DOUBLE_EQ(sigmoid<double>(nullptr, Tensor<double>::scalar(0.0))[0], 0.5);
  auto big = sigmoid<double>(nullptr, Tensor<double>({2}, {-800.0, 800.0}));
  EXPECT_GE(big[0], 0.0);
  EXPECT_LE(big[1], 1.0);
  EXPECT_NEAR(gelu<double>(nullptr, Tensor<double>::scalar(1.0))[0], 0.8413447460685429, 1e-12);
}

TEST(Activation, ReluGradAtZeroIsZero) {
  Tensor<double> x({3}, {-1.0, 0.0, 2.0}, true);
  Tape<double> tape;
  auto l = sum(&tape, relu(&tape, x));
  tape.backward(l);
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 1.0);
}

TEST(Activation, Gradcheck) {
  for (auto kind : {Activation::Gelu, Activation::Sigmoid, Activation::Relu}) {
    check_seeds("activation", [kind](std::uint64_t seed) {
      std::mt19937_64 rng(seed);
      auto x = random_tensor({17}, rng, 2.0);
      // Keep relu probes away from the kink.
      if (kind == Activation::Relu)
        for (auto& v : x.values())
          if (std::abs(v) < 1e-3) v = 0.5;
      return gradcheck([&](Tape<double>* t) { return probe(t, activation(t, kind, x), seed); }, {x}, 1e-6, 0, seed);
    });
  }
}

TEST(Upsample, Constant) {
  auto x = Tensor<double>::full({1, 2, 3, 3}, 4.5);
  auto y = upsample_bilinear2x<double>(nullptr, x);
  ASSERT_EQ(y.shape(), (Shape{1, 2, 6, 6}));
  for (auto v : y.values()) EXPECT_DOUBLE_EQ(v, 4.5);
}

TEST(Upsample, HandComputed2x2) {
  Tensor<double> x({1, 1, 2, 2}, {1, 3, 5, 7});
  auto y = upsample_bilinear2x<double>(nullptr, x);
  const double expect[16] = {1, 1.5, 2.5, 3, 2, 2.5, 3.5, 4, 4, 4.5, 5.5, 6, 5, 5.5, 6.5, 7};
  for (int i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(y[i], expect[i]) << i;
}

TEST(Upsample, Gradcheck) {
  check_seeds("upsample", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor({2, 2, 3, 4}, rng);
    return gradcheck([&](Tape<double>* t) { return probe(t, upsample_bilinear2x(t, x), seed); }, {x}, 1e-5, 0, seed);
  });
}

TEST(MaxPool, ValuesAndGrad) {
  Tensor<double> x({1, 1, 4, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16});
  auto y = maxpool2d<double>(nullptr, x, 3, 2, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y[0], 6);
  EXPECT_EQ(y[3], 16);
  check_seeds("maxpool", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor({1, 2, 6, 6}, rng);
    return gradcheck([&](Tape<double>* t) { return probe(t, maxpool2d(t, x, 3, 2, 1), seed); }, {x}, 1e-6, 0, seed);
  });
}

TEST(LayerNorm, Gradcheck) {
  check_seeds("layernorm", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor({2, 3, 8}, rng, 2.0);
    auto g = random_tensor({8}, rng);
    auto b = random_tensor({8}, rng);
    return gradcheck([&](Tape<double>* t) { return probe(t, layer_norm<double>(t, x, g, b, 1e-6), seed); },
                     {x, g, b}, 1e-5, 0, seed);
  });
}

TEST(Linear, Gradcheck) {
  check_seeds("linear", [](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto x = random_tensor({2, 3, 5}, rng);
    auto w = random_tensor({4, 5}, rng);
    auto b = random_tensor({4}, rng);
    return gradcheck([&](Tape<double>* t) { return probe(t, linear(t, x, w, b), seed); }, {x, w, b}, 1e-5, 0, seed);
  });
}

TEST(Transformer, ZeroWeightsAreIdentity) {
  Rng rng(1);
  TransformerBlock<double> blk(8, 2, 16, rng);
  for (auto* lin : {&blk.q, &blk.k, &blk.v, &blk.proj, &blk.fc1, &blk.fc2}) {
    for (auto& v : lin->weight.values()) v = 0.0;
  }
  std::mt19937_64 r(2);
  auto x = random_tensor({1, 4, 8}, r, 1.0, false);
  auto y = blk(Context<double>{}, x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
}

TEST(Transformer, SingleTokenAttendsToItself) {
  std::mt19937_64 r(3);
  auto q = random_tensor({1, 1, 4}, r, 5.0, false);
  auto k = random_tensor({1, 1, 4}, r, 5.0, false);
  auto v = random_tensor({1, 1, 4}, r, 1.0, false);
  auto y = attention<double>(nullptr, q, k, v, 2);
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(y[i], v[i]);
}

TEST(Transformer, HeadsMustDivide) {
  Rng rng(1);
  EXPECT_EQ(code_of([&] { TransformerBlock<double>(8, 3, 16, rng); }), ErrorCode::HeadsDontDivide);
  std::mt19937_64 r(3);
  auto q = random_tensor({1, 2, 6}, r, 1.0, false);
  EXPECT_EQ(code_of([&] { attention<double>(nullptr, q, q, q, 4); }), ErrorCode::HeadsDontDivide);
}

TEST(Transformer, Gradcheck) {
  check_seeds("transformer", [](std::uint64_t seed) {
    Rng rng(seed);
    TransformerBlock<double> blk(8, 2, 16, rng);
    std::mt19937_64 r(seed + 7);
    auto x = random_tensor({1, 4, 8}, r);
    ParamList<double> pl;
    blk.collect(pl, "b");
    auto params = pl.trainable();
    params.push_back(x);
    return gradcheck(
        [&](Tape<double>* t) { return probe(t, blk(Context<double>{t, true}, x), seed); }, params, 1e-5, 80, seed);
  });
}

TEST(Channels, ConcatSelectRoundTrip) {
  std::mt19937_64 r(4);
  auto a = random_tensor({2, 3, 4, 4}, r, 1.0, false);
  auto b = random_tensor({2, 2, 4, 4}, r, 1.0, false);
  auto c = concat_channels<double>(nullptr, {a, b});
  ASSERT_EQ(c.shape(), (Shape{2, 5, 4, 4}));
  auto s = select_channels<double>(nullptr, c, {0, 1});
  auto a01 = select_channels<double>(nullptr, a, {0, 1});
  for (std::size_t i = 0; i < s.numel(); ++i) EXPECT_EQ(s[i], a01[i]);
  auto back = concat_channels<double>(nullptr, {select_channels<double>(nullptr, c, {0, 1, 2}),
                                                select_channels<double>(nullptr, c, {3, 4})});
  for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_EQ(back[i], c[i]);
  EXPECT_EQ(code_of([&] { select_channels<double>(nullptr, c, {5}); }), ErrorCode::IndexOutOfRange);
  auto bad = random_tensor({2, 2, 3, 4}, r, 1.0, false);
  EXPECT_EQ(code_of([&] { concat_channels<double>(nullptr, {a, bad}); }), ErrorCode::ShapeMismatch);
}

TEST(Channels, SelectGradientIsIndicator) {
  std::mt19937_64 r(5);
  auto x = random_tensor({1, 4, 2, 2}, r);
  Tape<double> tape;
  auto l = sum(&tape, select_channels(&tape, x, {1, 3}));
  tape.backward(l);
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 4; ++i) EXPECT_EQ(x.grad()[c * 4 + i], (c == 1 || c == 3) ? 1.0 : 0.0);
  auto y = random_tensor({1, 2, 2, 2}, r, 1.0);
  auto rep = gradcheck(
      [&](Tape<double>* t) {
        return probe(t, concat_channels<double>(t, {select_channels(t, x, {2, 0}), y}), 9);
      },
      {x}, 1e-5);
  EXPECT_LE(rep.max_rel_err, kTol);
}

TEST(Backward, SimpleLosses) {
  std::mt19937_64 r(6);
  auto x = random_tensor({3, 4}, r);
  Tape<double> tape;
  auto l = sum(&tape, x);
  tape.backward(l);
  for (auto g : x.grad()) EXPECT_EQ(g, 1.0);
  x.zero_grad();
  auto l2 = sum(&tape, mul(&tape, x, x));
  tape.backward(l2);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
  Tensor<double> v({2}, true);
  EXPECT_EQ(code_of([&] { tape.backward(v); }), ErrorCode::NotScalar);
}

TEST(Backward, UnusedParameterGradIsZero) {
  std::mt19937_64 r(7);
  auto x = random_tensor({4}, r);
  auto unused = random_tensor({4}, r);
  unused.zero_grad();
  Tape<double> tape;
  auto l = sum(&tape, x);
  tape.backward(l);
  for (auto g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, Deterministic) {
  auto run = [] {
    Rng rng(11);
    ConvBnRelu<float> a(2, 4, 3, 1, rng);
    TransformerBlock<float> blk(4, 2, 8, rng);
    Tensor<float> x({2, 2, 6, 6}, true);
    std::normal_distribution<float> d;
    for (auto& v : x.values()) v = d(rng);
    Tape<float> tape;
    Context<float> ctx{&tape, true};
    auto h = a(ctx, x);
    auto tok = blk(ctx, to_tokens(&tape, h));
    auto l = sum(&tape, mul(&tape, tok, tok));
    tape.backward(l);
    std::vector<float> g(x.grad().begin(), x.grad().end());
    g.insert(g.end(), a.conv.weight.grad().begin(), a.conv.weight.grad().end());
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(Tokens, RoundTripAndGrad) {
  std::mt19937_64 r(8);
  auto x = random_tensor({2, 3, 2, 4}, r, 1.0, false);
  auto t = to_tokens<double>(nullptr, x);
  ASSERT_EQ(t.shape(), (Shape{2, 8, 3}));
  EXPECT_EQ(t[1 * 3 + 2], x[2 * 8 + 1]);
  auto back = from_tokens<double>(nullptr, t, 2, 4);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(back[i], x[i]);
  auto xg = random_tensor({1, 2, 2, 3}, r);
  auto rep = gradcheck(
      [&](Tape<double>* tp) {
        auto tok = to_tokens(tp, xg);
        return probe(tp, from_tokens(tp, mul(tp, tok, tok), 2, 3), 3);
      },
      {xg}, 1e-5);
  EXPECT_LE(rep.max_rel_err, kTol);
}

TEST(Add, BroadcastGradcheck) {
  check_seeds("add-broadcast", [](std::uint64_t seed) {
    std::mt19937_64 r(seed);
    auto a = random_tensor({3, 4, 5}, r);
    auto b = random_tensor({1, 4, 5}, r);
    return gradcheck([&](Tape<double>* t) { return probe(t, add(t, a, b), seed); }, {a, b}, 1e-5, 0, seed);
  });
}

TEST(AdamW, ZeroGradNoDecayUnchanged) {
  auto p = Tensor<double>({3}, {1.0, -2.0, 0.5}, true);
  p.zero_grad();
  std::vector<Tensor<double>> ps{p};
  auto st = AdamWState<double>::for_params(ps, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  adamw_step(ps, st, 1e-3);
  EXPECT_EQ(p[0], 1.0);
  EXPECT_EQ(p[1], -2.0);
  EXPECT_EQ(st.step, 1);
}

TEST(AdamW, FirstStepMovesByLr) {
  auto p = Tensor<double>({2}, {1.0, 1.0}, true);
  p.grad()[0] = 0.3;
  p.grad()[1] = -7.0;
  std::vector<Tensor<double>> ps{p};
  auto st = AdamWState<double>::for_params(ps, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  adamw_step(ps, st, 1e-3);
  EXPECT_NEAR(p[0], 1.0 - 1e-3, 1e-9);
  EXPECT_NEAR(p[1], 1.0 + 1e-3, 1e-9);
}

TEST(AdamW, DecoupledDecay) {
  auto p = Tensor<double>({2}, {2.0, -4.0}, true);
  std::vector<Tensor<double>> ps{p};
  auto st = AdamWState<double>::for_params(ps, AdamWConfig{0.9, 0.999, 1e-8, 0.1});
  adamw_step(ps, st, 0.01);
  EXPECT_NEAR(p[0], 2.0 * (1 - 0.01 * 0.1), 1e-12);
  EXPECT_NEAR(p[1], -4.0 * (1 - 0.01 * 0.1), 1e-12);
}

TEST(AdamW, MatchesHandRecurrence) {
  auto p = Tensor<double>({1}, {0.7}, true);
  std::vector<Tensor<double>> ps{p};
  AdamWConfig cfg;
  auto st = AdamWState<double>::for_params(ps, cfg);
  double m = 0, v = 0, theta = 0.7;
  const double grads[] = {0.5, -0.2, 0.1, 0.9};
  for (int t = 1; t <= 4; ++t) {
    p.grad()[0] = grads[t - 1];
    adamw_step(ps, st, 0.01);
    const double g = grads[t - 1];
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    theta = theta * (1 - 0.01 * 0.01) - 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p[0], theta, 1e-12);
  }
}

TEST(AdamW, StateMismatch) {
  std::vector<Tensor<double>> ps{Tensor<double>({2}, true)};
  AdamWState<double> st;
  EXPECT_EQ(code_of([&] { adamw_step(ps, st, 0.1); }), ErrorCode::ShapeMismatch);
}

TEST(LrSchedule, Linear) {
  LrSchedule s{0.001, 250};
  EXPECT_DOUBLE_EQ(lr_linear(s, 0), 0.001);
  EXPECT_DOUBLE_EQ(lr_linear(s, 250), 0.0);
  EXPECT_DOUBLE_EQ(lr_linear(s, 125), 0.0005);
  EXPECT_EQ(code_of([&] { lr_linear(s, 251); }), ErrorCode::EpochOutOfRange);
  EXPECT_EQ(code_of([&] { lr_linear(s, -1); }), ErrorCode::EpochOutOfRange);
}
