#pragma once

// Training loop, evaluation and the ablation harnesses.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "peci/cin.hpp"
#include "peci/config.hpp"
#include "peci/data.hpp"
#include "peci/losses.hpp"
#include "peci/nn/optim.hpp"

namespace peci::trainer {

struct TrainConfig {
  int epochs = 250;
  int batch_size = 16;
  double initial_lr = 1e-3;
  std::uint64_t seed = 0;
  /// Empty: LossWeights::defaults(num_stages).
  std::optional<losses::LossWeights> loss_weights;
  double theta = 0.5;
  /// Stop after this many optimizer steps; 0 means no limit.
  long long max_steps = 0;
  /// Validate every this many epochs (and always after the last one).
  int eval_every = 1;
  nn::AdamWConfig adamw;
  cin::CinConfig model;
  data::SplitRatios split;
  std::string data_dir;
  std::string out_dir;

  losses::LossWeights weights() const {
    return loss_weights ? *loss_weights : losses::LossWeights::defaults(model.num_stages);
  }

  void validate() const {
    if (epochs < 1) fail(ErrorCode::ConfigInvalid, "epochs must be >= 1");
    if (batch_size < 1) fail(ErrorCode::ConfigInvalid, "batch_size must be >= 1");
    if (!(initial_lr > 0.0)) fail(ErrorCode::ConfigInvalid, "initial_lr must be positive");
    if (!(theta > 0.0 && theta < 1.0)) fail(ErrorCode::ConfigInvalid, "theta must lie in (0,1)");
    if (max_steps < 0) fail(ErrorCode::ConfigInvalid, "max_steps must be >= 0");
    if (eval_every < 1) fail(ErrorCode::ConfigInvalid, "eval_every must be >= 1");
    model.validate();
    weights().validate(model.num_stages);
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"initial_lr", c.initial_lr},
          {"seed", c.seed},
          {"loss_weights", c.loss_weights ? config::to_json(*c.loss_weights) : nlohmann::json(nullptr)},
          {"theta", c.theta},
          {"max_steps", c.max_steps},
          {"eval_every", c.eval_every},
          {"weight_decay", c.adamw.weight_decay},
          {"split", {c.split.train, c.split.val, c.split.test}},
          {"data_dir", c.data_dir},
          {"out_dir", c.out_dir},
          {"model", config::to_json(c.model)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  config::detail::require_object(j, "train config");
  TrainConfig c;
  using config::detail::get_if;
  get_if(j, "epochs", c.epochs);
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "initial_lr", c.initial_lr);
  get_if(j, "seed", c.seed);
  get_if(j, "theta", c.theta);
  get_if(j, "max_steps", c.max_steps);
  get_if(j, "eval_every", c.eval_every);
  get_if(j, "weight_decay", c.adamw.weight_decay);
  get_if(j, "data_dir", c.data_dir);
  get_if(j, "out_dir", c.out_dir);
  if (j.contains("model")) c.model = config::cin_from_json(j["model"]);
  if (j.contains("split")) {
    std::vector<int> r;
    get_if(j, "split", r);
    if (r.size() != 3) fail(ErrorCode::ConfigInvalid, "split must list three ratios");
    c.split = {r[0], r[1], r[2]};
  }
  if (j.contains("loss_weights") && !j["loss_weights"].is_null()) {
    losses::LossWeights w;
    get_if(j, "loss_weights", w.w);
    c.loss_weights = w;
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Prepared data: pipeline stacks computed once per sample.

template <class T>
struct Prepared {
  std::vector<nn::Tensor<T>> stacks;  // [N,H,W]
  std::vector<const MaskSet*> masks;
};

template <class T>
Prepared<T> prepare(const data::Dataset& dataset, const pen::PenConfig& pen_config, int input_size) {
  Prepared<T> out;
  for (const auto& s : dataset) {
    if (s.image.width() != input_size || s.image.height() != input_size) {
      fail(ErrorCode::ShapeMismatch, "sample " + s.frame_id + " is " + std::to_string(s.image.width()) + "x" +
                                         std::to_string(s.image.height()) + ", model expects " +
                                         std::to_string(input_size) + "x" + std::to_string(input_size));
    }
    out.stacks.push_back(pen::pen_apply_algorithms<T>(s.image, pen_config));
    out.masks.push_back(&s.masks);
  }
  return out;
}

template <class T>
nn::Tensor<T> batch_stacks(const Prepared<T>& p, std::span<const std::size_t> idx) {
  std::vector<nn::Tensor<T>> items;
  for (auto i : idx) items.push_back(p.stacks[i]);
  return pen::make_batch(items);
}

template <class T>
nn::Tensor<T> batch_targets(const Prepared<T>& p, std::span<const std::size_t> idx) {
  std::vector<const MaskSet*> m;
  for (auto i : idx) m.push_back(p.masks[i]);
  return losses::masks_to_tensor<T>(m);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  std::vector<double> dice = std::vector<double>(kNumRegions, 0.0);  // canonical order
  double average = 0.0;
  std::size_t images = 0;

  double bolus() const { return dice[index_of(Region::Bolus)]; }
};

/// Macro average of per-image region Dice.
inline EvalResult score_predictions(const std::vector<MaskSet>& preds, const std::vector<const MaskSet*>& truths) {
  if (preds.empty()) fail(ErrorCode::EmptyDataset, "nothing to evaluate");
  if (preds.size() != truths.size()) fail(ErrorCode::ShapeMismatch, "prediction and ground-truth counts differ");
  EvalResult r;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto d = losses::region_dice(preds[i], *truths[i]);
    for (int t = 0; t < kNumRegions; ++t) r.dice[t] += d[t];
  }
  for (auto& v : r.dice) v /= static_cast<double>(preds.size());
  r.average = std::accumulate(r.dice.begin(), r.dice.end(), 0.0) / kNumRegions;
  r.images = preds.size();
  return r;
}

/// Final-stage thresholded masks for every prepared sample, in order.
template <class T>
std::vector<MaskSet> predict_all(const cin::CinModel<T>& model, const Prepared<T>& p, double theta,
                                 int batch = 8) {
  std::vector<MaskSet> out;
  std::vector<std::size_t> idx(p.stacks.size());
  std::iota(idx.begin(), idx.end(), 0);
  nn::Context<T> ctx{nullptr, false};
  for (std::size_t start = 0; start < idx.size(); start += batch) {
    const std::size_t n = std::min<std::size_t>(batch, idx.size() - start);
    auto x = batch_stacks(p, std::span<const std::size_t>(idx).subspan(start, n));
    auto results = model.forward(ctx, x);
    const auto& probs = results.back().probs;
    const int h = probs.dim(2), w = probs.dim(3);
    const std::size_t len = static_cast<std::size_t>(kNumRegions) * h * w;
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(losses::threshold_maskset<T>(probs.values().subspan(i * len, len), w, h, theta));
    }
  }
  return out;
}

template <class T>
EvalResult evaluate(const cin::CinModel<T>& model, const Prepared<T>& p, double theta = 0.5) {
  if (p.stacks.empty()) fail(ErrorCode::EmptyDataset, "nothing to evaluate");
  return score_predictions(predict_all(model, p, theta), p.masks);
}

template <class T>
EvalResult evaluate(const cin::CinModel<T>& model, const data::Dataset& dataset, double theta = 0.5) {
  if (dataset.empty()) fail(ErrorCode::EmptyDataset, "nothing to evaluate");
  return evaluate(model, prepare<T>(dataset, model.config().pen, model.config().input_size), theta);
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
  int epoch = 0;
  long long step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<EvalResult> val;
};

inline nlohmann::json to_json(const EpochLog& e) {
  nlohmann::json j{{"epoch", e.epoch}, {"step", e.step}, {"lr", e.lr}, {"train_loss", e.train_loss}};
  if (e.val) {
    nlohmann::json v = nlohmann::json::object();
    for (int t = 0; t < kNumRegions; ++t) v[std::string(kRegionKeys[t])] = e.val->dice[t];
    v["average"] = e.val->average;
    j["val"] = v;
  }
  return j;
}

template <class T>
struct TrainResult {
  cin::CinModel<T> model;  // best validation bolus Dice, or the last state without validation data
  nn::AdamWState<T> optimizer;
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val_bolus = -1.0;
  long long steps = 0;
};

/// Called after every epoch with the current model; returning false ends training early.
template <class T>
using EpochCallback = std::function<bool(const EpochLog&, const cin::CinModel<T>&)>;

namespace detail {

template <class T>
std::vector<std::vector<T>> snapshot(const cin::CinModel<T>& model) {
  std::vector<std::vector<T>> out;
  const auto params = model.parameters();
  for (const auto& it : params.items()) out.emplace_back(it.tensor.values().begin(), it.tensor.values().end());
  return out;
}

template <class T>
void restore(cin::CinModel<T>& model, const std::vector<std::vector<T>>& snap) {
  auto params = model.parameters();
  for (std::size_t i = 0; i < snap.size(); ++i) std::copy(snap[i].begin(), snap[i].end(), params.items()[i].tensor.values().begin());
}

}  // namespace detail

/// One optimizer step on a batch; returns the loss value.
template <class T>
double train_step(const cin::CinModel<T>& model, std::vector<nn::Tensor<T>>& trainable, nn::AdamWState<T>& opt,
                  const nn::Tensor<T>& x, const nn::Tensor<T>& y, const losses::LossWeights& weights, double lr) {
  for (auto& p : trainable) p.zero_grad();
  nn::Tape<T> tape;
  auto results = model.forward({&tape, true}, x);
  std::vector<nn::Tensor<T>> probs;
  for (auto& r : results) probs.push_back(r.probs);
  auto loss = losses::total_loss(&tape, probs, y, weights);
  const double value = static_cast<double>(loss.item());
  if (!std::isfinite(value)) fail(ErrorCode::Diverged, "loss became " + std::to_string(value));
  tape.backward(loss);
  nn::adamw_step(trainable, opt, lr);
  return value;
}

template <class T>
TrainResult<T> train(const TrainConfig& config, const data::Dataset& train_set, const data::Dataset& val_set = {},
                     const EpochCallback<T>& on_epoch = {}) {
  config.validate();
  if (train_set.empty()) fail(ErrorCode::EmptyDataset, "training split is empty");
  const auto& mc = config.model;
  const auto train_data = prepare<T>(train_set, mc.pen, mc.input_size);
  const auto val_data = prepare<T>(val_set, mc.pen, mc.input_size);
  const auto weights = config.weights();

  TrainResult<T> result{cin::CinModel<T>(mc), {}, {}, -1, -1.0, 0};
  auto params = result.model.parameters();
  auto trainable = params.trainable();
  result.optimizer = nn::AdamWState<T>::for_params(trainable, config.adamw);
  const nn::LrSchedule schedule{config.initial_lr, config.epochs};

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_data.stacks.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<T>> best;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = nn::lr_linear(schedule, epoch);
    double loss_sum = 0.0;
    int batches = 0;
    bool out_of_steps = false;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min<std::size_t>(config.batch_size, order.size() - start);
      const auto idx = std::span<const std::size_t>(order).subspan(start, n);
      loss_sum += train_step(result.model, trainable, result.optimizer, batch_stacks(train_data, idx),
                             batch_targets(train_data, idx), weights, lr);
      ++batches;
      ++result.steps;
      if (config.max_steps > 0 && result.steps >= config.max_steps) {
        out_of_steps = true;
        break;
      }
    }
    EpochLog entry{epoch + 1, result.steps, lr, loss_sum / batches, std::nullopt};
    const bool last = out_of_steps || epoch + 1 == config.epochs;
    if (!val_data.stacks.empty() && ((epoch + 1) % config.eval_every == 0 || last)) {
      entry.val = evaluate(result.model, val_data, config.theta);
      if (entry.val->bolus() > result.best_val_bolus) {
        result.best_val_bolus = entry.val->bolus();
        result.best_epoch = epoch + 1;
        best = detail::snapshot(result.model);
      }
    }
    result.log.push_back(entry);
    if (on_epoch && !on_epoch(entry, result.model)) break;
    if (out_of_steps) break;
  }
  for (auto& p : trainable) p.drop_grad();
  if (!best.empty()) detail::restore(result.model, best);
  return result;
}

// ---------------------------------------------------------------------------
// Tables

struct TableRow {
  std::string label;
  std::vector<double> dice;  // canonical region order
  double average = 0.0;
  std::vector<double> extras;
};

struct Table {
  std::string label_column = "model";
  std::vector<std::string> extra_columns;
  std::vector<TableRow> rows;
};

inline TableRow row_from(std::string label, const EvalResult& r, std::vector<double> extras = {}) {
  return {std::move(label), r.dice, r.average, std::move(extras)};
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string to_csv(const Table& t) {
  std::ostringstream os;
  os << csv_quote(t.label_column);
  for (auto k : kRegionKeys) os << ',' << k;
  os << ",average";
  for (const auto& c : t.extra_columns) os << ',' << csv_quote(c);
  os << '\n' << std::fixed << std::setprecision(4);
  for (const auto& r : t.rows) {
    if (r.dice.size() != static_cast<std::size_t>(kNumRegions) || r.extras.size() != t.extra_columns.size()) {
      fail(ErrorCode::ShapeMismatch, "table row '" + r.label + "' has the wrong number of cells");
    }
    os << csv_quote(r.label);
    for (double v : r.dice) os << ',' << v;
    os << ',' << r.average;
    for (double v : r.extras) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

inline void write_csv(const std::filesystem::path& path, const Table& t) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << to_csv(t);
  if (!out) fail(ErrorCode::IoError, "failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Ablations

/// Train/val/test sets shared by every ablation run.
struct Splits {
  data::Dataset train, val, test;
};

inline Splits make_splits(const data::Dataset& dataset, const data::SplitRatios& ratios, std::uint64_t seed) {
  const auto s = data::split_by_patient(dataset, ratios, seed);
  return {data::subset(dataset, s.train), data::subset(dataset, s.val), data::subset(dataset, s.test)};
}

namespace detail {

inline EvalResult mean_of(const std::vector<EvalResult>& rs) {
  EvalResult m;
  for (const auto& r : rs) {
    for (int t = 0; t < kNumRegions; ++t) m.dice[t] += r.dice[t] / rs.size();
    m.average += r.average / rs.size();
    m.images += r.images;
  }
  return m;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

/// Trains one configuration per seed and averages the test metrics.
/// The seed drives the model init and the batch order.
template <class T>
EvalResult train_and_test(TrainConfig config, const Splits& splits, const std::vector<std::uint64_t>& seeds,
                          const std::function<void(std::uint64_t, const EvalResult&)>& on_seed = {}) {
  std::vector<EvalResult> rs;
  for (auto seed : seeds) {
    config.seed = seed;
    config.model.seed = seed;
    auto res = train<T>(config, splits.train, splits.val);
    auto r = evaluate(res.model, splits.test.empty() ? splits.val : splits.test, config.theta);
    if (on_seed) on_seed(seed, r);
    rs.push_back(r);
  }
  return detail::mean_of(rs);
}

/// Median eval-mode forward time per image in milliseconds, from precomputed stacks.
template <class T>
double forward_ms(const cin::CinModel<T>& model, const nn::Tensor<T>& stack, int repeats = 15) {
  auto x = pen::make_batch<T>({stack});
  nn::Context<T> ctx{nullptr, false};
  model.forward(ctx, x);  // warm-up
  std::vector<double> ms;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto r = model.forward(ctx, x);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return detail::median(ms);
}

/// Median per-image preprocessing (pipeline stack) time in milliseconds.
inline double preprocess_ms(const data::Dataset& images, const pen::PenConfig& pen, int max_images = 20) {
  std::vector<double> ms;
  for (int i = 0; i < std::min<int>(max_images, static_cast<int>(images.size())); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    auto s = pen::pen_apply_algorithms<float>(images[i].image, pen);
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return detail::median(ms);
}

using Progress = std::function<void(const std::string&)>;

/// One row per stage count: test Dice, then inference ms per image and per stage.
template <class T>
Table ablate_stages(const TrainConfig& base, const Splits& splits, const std::vector<int>& stage_counts,
                    const std::vector<std::uint64_t>& seeds, const Progress& progress = {}) {
  if (splits.train.empty()) fail(ErrorCode::EmptyDataset, "training split is empty");
  Table table{"model", {"ms_per_image", "ms_per_stage"}, {}};
  for (int s : stage_counts) {
    TrainConfig c = base;
    c.model.num_stages = s;
    c.loss_weights.reset();
    // The context set stays the same across transitions.
    c.model.context.assign(s > 1 ? s - 1 : 0, base.model.context_for(0));
    const auto r = train_and_test<T>(c, splits, seeds);
    cin::CinModel<T> timing_model(c.model);
    const auto stack = pen::pen_apply_algorithms<T>(splits.train.front().image, c.model.pen);
    const double ms = forward_ms(timing_model, stack);
    const std::string label = "PECI-Net (" + std::to_string(s) + (s == 1 ? " stage)" : " stages)");
    table.rows.push_back(row_from(label, r, {ms, ms / s}));
    if (progress) progress(label);
  }
  return table;
}

struct PreprocessingTables {
  Table single;       // one algorithm at a time, then the full ensemble
  Table incremental;  // identity, then algorithms added one by one
};

/// A PEN configuration from pipeline names. A lone "identity" means no PEN.
inline pen::PenConfig pen_for(const std::vector<std::string>& names, const imgproc::ClaheParams& clahe,
                              bool learned = true) {
  pen::PenConfig c;
  c.pipelines.clear();
  for (const auto& n : names) c.pipelines.push_back(imgproc::PipelineSpec::parse(n, clahe));
  c.mode = learned ? pen::PenMode::Learned : pen::PenMode::Replicate;
  c.validate();
  return c;
}

inline std::string pipeline_title(const std::string& name) {
  if (name == "identity") return "Identity mapping";
  if (name == "sharpen") return "Laplacian sharpening";
  if (name == "clahe") return "CLAHE";
  if (name == "clahe,clahe") return "Double CLAHE";
  if (name == "clahe,sharpen") return "CLAHE + Sharpening";
  return name;
}

template <class T>
PreprocessingTables ablate_preprocessing(const TrainConfig& base, const Splits& splits,
                                         const std::vector<std::uint64_t>& seeds, const Progress& progress = {}) {
  if (splits.train.empty()) fail(ErrorCode::EmptyDataset, "training split is empty");
  const auto clahe = config::shared_clahe(base.model.pen.pipelines);
  const std::vector<std::string> all = {"identity", "sharpen", "clahe", "clahe,sharpen", "clahe,clahe"};
  std::map<std::string, TableRow> cache;
  auto run = [&](const std::string& label, const pen::PenConfig& pen) {
    std::string key = pen.mode == pen::PenMode::Learned ? "L:" : "R:";
    for (const auto& p : pen.pipelines) key += p.to_string() + ";";
    if (auto it = cache.find(key); it != cache.end()) {
      auto row = it->second;
      row.label = label;
      return row;
    }
    TrainConfig c = base;
    c.model.pen = pen;
    const auto r = train_and_test<T>(c, splits, seeds);
    auto row = row_from(label, r, {static_cast<double>(pen.num_inputs()), preprocess_ms(splits.train, pen)});
    cache.emplace(key, row);
    if (progress) progress(label);
    return row;
  };

  PreprocessingTables out;
  out.single = {"preprocessing", {"algorithms", "preprocess_ms"}, {}};
  for (const auto& name : {"identity", "sharpen", "clahe", "clahe,clahe", "clahe,sharpen"}) {
    // A single algorithm feeds the CIN directly, replicated to three channels.
    out.single.rows.push_back(run(pipeline_title(name), pen_for({name}, clahe, false)));
  }
  out.single.rows.push_back(run("PEN", pen_for(all, clahe)));

  out.incremental = {"preprocessing", {"algorithms", "preprocess_ms"}, {}};
  out.incremental.rows.push_back(run("Identity mapping (CIN)", pen_for({"identity"}, clahe, false)));
  for (std::size_t k = 2; k <= all.size(); ++k) {
    std::vector<std::string> names(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
    std::string label;
    for (const auto& n : names) label += (label.empty() ? "" : " & ") + pipeline_title(n);
    out.incremental.rows.push_back(run(label, pen_for(names, clahe)));
  }
  out.incremental.rows.push_back(
      run("CLAHE & CLAHE + Sharpening & Double CLAHE", pen_for({"clahe", "clahe,sharpen", "clahe,clahe"}, clahe)));
  return out;
}

struct ContextChoice {
  std::string label;
  std::vector<int> regions;
};

inline std::vector<ContextChoice> default_context_choices() {
  using R = Region;
  return {{"All regions", parse_region_list("all")},
          {"Cervical Spine and Mandible", {index_of(R::CervicalSpine), index_of(R::Mandible)}},
          {"Hyoid Bone and Vocal Fold", {index_of(R::HyoidBone), index_of(R::VocalFold)}},
          {"Hyoid Bone, Vocal Fold and Soft Tissue", {index_of(R::HyoidBone), index_of(R::VocalFold), index_of(R::SoftTissue)}}};
}

template <class T>
Table ablate_context(const TrainConfig& base, const Splits& splits, const std::vector<ContextChoice>& choices,
                     const std::vector<std::uint64_t>& seeds, const Progress& progress = {}) {
  if (splits.train.empty()) fail(ErrorCode::EmptyDataset, "training split is empty");
  if (base.model.num_stages < 2) fail(ErrorCode::ConfigInvalid, "context ablation needs at least two stages");
  Table table{"selected_regions", {"stage2_channels"}, {}};
  for (const auto& choice : choices) {
    if (choice.regions.empty()) fail(ErrorCode::ConfigInvalid, "empty context set for '" + choice.label + "'");
    TrainConfig c = base;
    c.model.context.assign(c.model.num_stages - 1, choice.regions);
    c.model.validate();
    const auto r = train_and_test<T>(c, splits, seeds);
    table.rows.push_back(row_from(choice.label, r, {static_cast<double>(c.model.stage_config(1).in_channels)}));
    if (progress) progress(choice.label);
  }
  return table;
}

}  // namespace peci::trainer
