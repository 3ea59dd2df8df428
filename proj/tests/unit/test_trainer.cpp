#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <sstream>

#include "peci/synth.hpp"
#include "peci/trainer.hpp"

using namespace peci;
using namespace peci::trainer;

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

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 2;
  c.model.input_size = 16;
  c.model.width = 16;
  c.model.depth = 1;
  c.model.heads = 2;
  c.model.mlp_hidden = 32;
  return c;
}

data::Dataset tiny_data(int patients = 2, int frames = 2, std::uint64_t seed = 4) {
  synth::SynthParams p;
  p.size = 16;
  return synth::generate(patients, frames, seed, p);
}

double norm_of(std::span<const float> a, std::span<const float> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double grad_norm(const nn::ParamList<float>& params, const std::string& prefix) {
  double s = 0;
  for (const auto& it : params.items()) {
    if (!it.trainable || it.name.rfind(prefix, 0) != 0 || !it.tensor.has_grad()) continue;
    for (float g : it.tensor.grad()) s += static_cast<double>(g) * g;
  }
  return std::sqrt(s);
}

nn::Tensor<float>& find_param(nn::ParamList<float>& params, const std::string& name) {
  for (auto& it : params.items())
    if (it.name == name) return it.tensor;
  throw std::runtime_error("no parameter " + name);
}

}  // namespace

// --- config ----------------------------------------------------------------

TEST(TrainConfig, Defaults) {
  TrainConfig c;
  EXPECT_EQ(c.epochs, 250);
  EXPECT_EQ(c.batch_size, 16);
  EXPECT_DOUBLE_EQ(c.initial_lr, 1e-3);
  EXPECT_DOUBLE_EQ(c.theta, 0.5);
  EXPECT_EQ(c.split.train, 8);
  EXPECT_NO_THROW(c.validate());
}

TEST(TrainConfig, Rejects) {
  auto c = tiny_config();
  c.epochs = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::ConfigInvalid);
  c = tiny_config();
  c.batch_size = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::ConfigInvalid);
  c = tiny_config();
  c.theta = 1.0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::ConfigInvalid);
  c = tiny_config();
  c.loss_weights = losses::LossWeights::defaults(3);
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::ConfigInvalid);
  EXPECT_EQ(code_of([] { train_config_from_json({{"epochs", 0}}); }), ErrorCode::ConfigInvalid);
}

TEST(TrainConfig, JsonRoundTrip) {
  auto c = tiny_config();
  c.seed = 17;
  c.max_steps = 9;
  c.model.context = {{0, 2, 5}};
  auto j = to_json(c);
  auto back = train_config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.model.stage_config(1).in_channels, 6);
}

// --- training ----------------------------------------------------------------

TEST(Train, EmptyTrainingSet) {
  EXPECT_EQ(code_of([] { train<float>(tiny_config(), {}); }), ErrorCode::EmptyDataset);
}

TEST(Train, SameSeedSameEpochOneLoss) {
  auto ds = tiny_data();
  auto c = tiny_config();
  c.epochs = 1;
  auto a = train<float>(c, ds);
  auto b = train<float>(c, ds);
  ASSERT_EQ(a.log.size(), 1u);
  const double la = a.log[0].train_loss, lb = b.log[0].train_loss;
  EXPECT_EQ(std::memcmp(&la, &lb, sizeof la), 0);
  auto pa = a.model.parameters(), pb = b.model.parameters();
  for (std::size_t i = 0; i < pa.items().size(); ++i)
    EXPECT_EQ(norm_of(pa.items()[i].tensor.values(), pb.items()[i].tensor.values()), 0.0);
}

TEST(Train, StepLimitAndLog) {
  auto ds = tiny_data(2, 3);
  auto c = tiny_config();
  c.epochs = 10;
  c.max_steps = 5;
  auto r = train<float>(c, ds);
  EXPECT_EQ(r.steps, 5);
  EXPECT_EQ(r.log.size(), 2u);  // 3 steps per epoch
  EXPECT_EQ(r.log.back().step, 5);
  EXPECT_DOUBLE_EQ(r.log[0].lr, 1e-3);
  EXPECT_DOUBLE_EQ(r.log[1].lr, 1e-3 * 0.9);
  auto j = to_json(r.log[0]);
  EXPECT_TRUE(j.contains("train_loss"));
  EXPECT_FALSE(j.contains("val"));
}

TEST(Train, GradientsReachPen) {
  auto ds = tiny_data();
  auto c = tiny_config();
  cin::CinModel<float> init(c.model);
  auto r = train<float>(c, ds);
  const auto before = init.pen_parameters();
  const auto after = r.model.pen_parameters();
  ASSERT_EQ(before.size(), 2u);
  EXPECT_GT(norm_of(before[0].values(), after[0].values()), 0.0);
}

TEST(Train, KeepsBestValidationWeights) {
  auto ds = tiny_data(4, 2);
  data::Dataset tr(ds.begin(), ds.begin() + 6), val(ds.begin() + 6, ds.end());
  auto c = tiny_config();
  c.epochs = 4;
  auto r = train<float>(c, tr, val);
  double best = -1;
  int best_epoch = -1;
  for (const auto& e : r.log) {
    ASSERT_TRUE(e.val.has_value());
    if (e.val->bolus() > best) best = e.val->bolus(), best_epoch = e.epoch;
  }
  EXPECT_EQ(r.best_epoch, best_epoch);
  EXPECT_DOUBLE_EQ(r.best_val_bolus, best);
  EXPECT_DOUBLE_EQ(evaluate(r.model, val).bolus(), best);
}

TEST(Train, CallbackStopsEarly) {
  auto c = tiny_config();
  c.epochs = 5;
  int calls = 0;
  auto r = train<float>(c, tiny_data(), {}, [&](const EpochLog&, const cin::CinModel<float>&) { return ++calls < 2; });
  EXPECT_EQ(calls, 2);
  EXPECT_EQ(r.log.size(), 2u);
}

TEST(Train, NanLossDiverges) {
  auto c = tiny_config();
  cin::CinModel<float> model(c.model);
  auto params = model.parameters();
  find_param(params, "stage1.head.bias")[0] = std::numeric_limits<float>::quiet_NaN();
  auto trainable = params.trainable();
  auto opt = nn::AdamWState<float>::for_params(trainable);
  auto ds = tiny_data(1, 1);
  auto p = prepare<float>(ds, c.model.pen, 16);
  std::vector<std::size_t> idx{0};
  EXPECT_EQ(code_of([&] {
              train_step(model, trainable, opt, batch_stacks(p, idx), batch_targets(p, idx), c.weights(), 1e-3);
            }),
            ErrorCode::Diverged);
}

// Stage 2 contributes nothing backwards when its head is zero, so whatever
// reaches stage 1 comes from its own loss term.
TEST(Train, IntermediateSupervisionFeedsStageOne) {
  auto c = tiny_config();
  auto ds = tiny_data(1, 2);
  auto p = prepare<float>(ds, c.model.pen, 16);
  std::vector<std::size_t> idx{0, 1};
  auto run = [&](const losses::LossWeights& w) {
    cin::CinModel<float> model(c.model);
    model.stage(1).zero_head();
    auto params = model.parameters();
    for (auto& t : params.trainable()) t.zero_grad();
    nn::Tape<float> tape;
    auto res = model.forward({&tape, true}, batch_stacks(p, idx));
    auto loss = losses::total_loss(&tape, {res[0].probs, res[1].probs}, batch_targets(p, idx), w);
    tape.backward(loss);
    return grad_norm(params, "stage1.");
  };
  auto w = losses::LossWeights::defaults(2);
  EXPECT_GT(run(w), 0.0);
  w.w[0].assign(kNumRegions, 0.0);
  EXPECT_EQ(run(w), 0.0);
}

// --- evaluation ----------------------------------------------------------------

TEST(Evaluate, OraclePredictionsScoreOne) {
  auto ds = tiny_data(2, 3);
  std::vector<MaskSet> preds;
  std::vector<const MaskSet*> truths;
  for (const auto& s : ds) preds.push_back(s.masks), truths.push_back(&s.masks);
  auto r = score_predictions(preds, truths);
  for (double d : r.dice) EXPECT_DOUBLE_EQ(d, 1.0);
  EXPECT_DOUBLE_EQ(r.average, 1.0);
  EXPECT_EQ(r.images, 6u);
}

TEST(Evaluate, MacroAverageOverImages) {
  MaskSet a(2, 1), b(2, 1), ta(2, 1), tb(2, 1);
  ta.at(0, 0, 0) = 1;
  a.at(0, 0, 0) = 1;  // image 1: bolus 1.0
  tb.at(0, 0, 0) = tb.at(0, 1, 0) = 1;
  b.at(0, 0, 0) = 1;  // image 2: bolus 2/3
  auto r = score_predictions({a, b}, {&ta, &tb});
  EXPECT_NEAR(r.bolus(), (1.0 + 2.0 / 3.0) / 2, 1e-12);
  // Other regions are empty in both prediction and truth.
  EXPECT_DOUBLE_EQ(r.dice[1], 1.0);
}

TEST(Evaluate, SilentModelScoresZeroBolus) {
  auto c = tiny_config();
  cin::CinModel<float> model(c.model);
  model.stage(1).zero_head();
  auto params = model.parameters();
  for (auto& v : find_param(params, "stage2.head.bias").values()) v = -10.f;
  auto ds = tiny_data(2, 2);
  for (const auto& s : ds) ASSERT_GT(s.masks.count(index_of(Region::Bolus)), 0u);
  auto r = evaluate(model, ds);
  EXPECT_DOUBLE_EQ(r.bolus(), 0.0);
  EXPECT_EQ(code_of([&] { evaluate(model, data::Dataset{}); }), ErrorCode::EmptyDataset);
}

TEST(Evaluate, SizeMismatchRejected) {
  auto c = tiny_config();
  cin::CinModel<float> model(c.model);
  synth::SynthParams p;
  p.size = 32;
  auto ds = synth::generate(1, 1, 0, p);
  EXPECT_EQ(code_of([&] { evaluate(model, ds); }), ErrorCode::ShapeMismatch);
}

// --- tables ----------------------------------------------------------------

TEST(Table, CsvColumnsInRegionOrder) {
  Table t{"model", {"ms"}, {}};
  EvalResult r;
  r.dice = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  r.average = 0.35;
  t.rows.push_back(row_from("a,b", r, {1.5}));
  auto csv = to_csv(t);
  std::istringstream is(csv);
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(header, "model,bolus,mandible,hyoid_bone,vocal_fold,cervical_spine,soft_tissue,average,ms");
  EXPECT_EQ(row, "\"a,b\",0.1000,0.2000,0.3000,0.4000,0.5000,0.6000,0.3500,1.5000");
  t.rows[0].extras.clear();
  EXPECT_EQ(code_of([&] { to_csv(t); }), ErrorCode::ShapeMismatch);
}

// --- ablations ----------------------------------------------------------------

namespace {

Splits tiny_splits() {
  synth::SynthParams p;
  p.size = 16;
  return make_splits(synth::generate(5, 1, 9, p), {8, 1, 1}, 0);
}

TrainConfig one_step() {
  auto c = tiny_config();
  c.epochs = 1;
  c.max_steps = 1;
  return c;
}

}  // namespace

TEST(Ablate, StagesOneRowPerCount) {
  auto t = ablate_stages<float>(one_step(), tiny_splits(), {1, 2}, {0});
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].label, "PECI-Net (1 stage)");
  EXPECT_EQ(t.rows[1].label, "PECI-Net (2 stages)");
  EXPECT_EQ(t.extra_columns, (std::vector<std::string>{"ms_per_image", "ms_per_stage"}));
  for (const auto& r : t.rows) EXPECT_GT(r.extras[0], 0.0);
  EXPECT_NEAR(t.rows[1].extras[1], t.rows[1].extras[0] / 2, 1e-12);
}

TEST(Ablate, ContextRowsAndChannels) {
  auto choices = default_context_choices();
  ASSERT_EQ(choices.size(), 4u);
  auto t = ablate_context<float>(one_step(), tiny_splits(), choices, {0});
  ASSERT_EQ(t.rows.size(), 4u);
  EXPECT_EQ(t.rows[0].extras[0], 9.0);
  EXPECT_EQ(t.rows[1].extras[0], 5.0);
  EXPECT_EQ(t.rows[2].extras[0], 5.0);
  EXPECT_EQ(t.rows[3].extras[0], 6.0);
  EXPECT_EQ(code_of([&] { ablate_context<float>(one_step(), tiny_splits(), {{"none", {}}}, {0}); }),
            ErrorCode::ConfigInvalid);
}

TEST(Ablate, PreprocessingRows) {
  auto t = ablate_preprocessing<float>(one_step(), tiny_splits(), {0});
  ASSERT_EQ(t.single.rows.size(), 6u);
  ASSERT_EQ(t.incremental.rows.size(), 6u);
  EXPECT_EQ(t.single.rows[0].label, "Identity mapping");
  EXPECT_EQ(t.single.rows.back().extras[0], 5.0);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(t.incremental.rows[i].extras[0], static_cast<double>(i + 1));
  EXPECT_EQ(t.incremental.rows[5].extras[0], 3.0);
  // The identity-only ensemble is the plain CIN, and both tables share it.
  EXPECT_EQ(t.single.rows[0].dice, t.incremental.rows[0].dice);
  EXPECT_EQ(t.single.rows.back().dice, t.incremental.rows[4].dice);
  for (const auto& r : t.single.rows) EXPECT_GE(r.extras[1], 0.0);
}

TEST(Ablate, PenForIdentityIsReplicate) {
  auto p = pen_for({"identity"}, {}, false);
  EXPECT_EQ(p.mode, pen::PenMode::Replicate);
  auto full = pen_for({"identity", "sharpen", "clahe", "clahe,sharpen", "clahe,clahe"}, {});
  EXPECT_EQ(full.num_inputs(), 5);
  EXPECT_EQ(full.mode, pen::PenMode::Learned);
}
