// peci: dataset synthesis, preprocessing preview, training, evaluation,
// inference, GradCAM and ablations behind one binary.
//
// Exit codes: 0 success, 2 usage error, 1 runtime error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "peci/checkpoint.hpp"
#include "peci/config.hpp"
#include "peci/data.hpp"
#include "peci/gradcam.hpp"
#include "peci/overlay.hpp"
#include "peci/png_io.hpp"
#include "peci/synth.hpp"
#include "peci/trainer.hpp"

using namespace peci;
namespace fs = std::filesystem;
using json = nlohmann::json;
using Real = float;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path output_root() {
  const char* env = std::getenv("PECI_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("peci_out");
}

fs::path or_default(const std::string& given, const std::string& leaf) {
  return given.empty() ? output_root() / leaf : fs::path(given);
}

json read_json(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::MissingFile, path.string());
  std::ifstream in(path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigInvalid, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << text;
}

template <class Img>
void save_png(const fs::path& path, const Img& img) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if constexpr (std::is_same_v<Img, GrayImage>) png::write_gray(path, img);
  else png::write_rgb(path, img);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string file_tag(std::string s) {
  for (auto& c : s)
    if (c == ',') c = '+';
  return s;
}

void print_table(const trainer::Table& t) {
  std::cout << trainer::to_csv(t);
}

// Training config: file first, then whatever flags were given.
struct TrainFlags {
  std::string config_file, data_dir, out_dir, backbone, context, pipelines;
  std::optional<int> epochs, batch_size, stages, input_size;
  std::optional<double> lr, theta;
  std::optional<long long> max_steps;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "JSON run configuration");
    cmd->add_option("--data", data_dir, "dataset directory (manifest.jsonl)");
    cmd->add_option("--epochs", epochs);
    cmd->add_option("--batch-size", batch_size);
    cmd->add_option("--lr", lr, "initial learning rate");
    cmd->add_option("--theta", theta, "mask threshold");
    cmd->add_option("--max-steps", max_steps);
    cmd->add_option("--seed", seed, "drives init, split and batch order");
    cmd->add_option("--stages", stages);
    cmd->add_option("--input-size", input_size);
    cmd->add_option("--backbone", backbone, "mini | full");
    cmd->add_option("--context", context, "region list for every transition, e.g. cervical_spine,mandible");
    cmd->add_option("--pipelines", pipelines, "PEN pipelines separated by ';', e.g. identity;sharpen;clahe");
  }

  trainer::TrainConfig resolve() const {
    json j = config_file.empty() ? json::object() : read_json(config_file);
    if (!j.is_object()) fail(ErrorCode::ConfigInvalid, "config must be a JSON object");
    auto& model = j["model"];
    if (model.is_null()) model = json::object();
    if (!backbone.empty()) model["backbone"] = backbone;
    if (stages) model["num_stages"] = *stages;
    if (input_size) model["input_size"] = *input_size;
    if (!context.empty()) model["context"] = context;
    if (!pipelines.empty()) {
      std::vector<std::string> names;
      std::size_t start = 0;
      while (start <= pipelines.size()) {
        const auto end = std::min(pipelines.find(';', start), pipelines.size());
        if (end > start) names.push_back(pipelines.substr(start, end - start));
        start = end + 1;
      }
      if (!model.contains("pen")) model["pen"] = json::object();
      model["pen"]["pipelines"] = names;
    }
    if (epochs) j["epochs"] = *epochs;
    if (batch_size) j["batch_size"] = *batch_size;
    if (lr) j["initial_lr"] = *lr;
    if (theta) j["theta"] = *theta;
    if (max_steps) j["max_steps"] = *max_steps;
    if (!data_dir.empty()) j["data_dir"] = data_dir;
    if (seed) {
      j["seed"] = *seed;
      model["seed"] = *seed;
    }
    return trainer::train_config_from_json(j);
  }
};

data::Dataset load_required(const std::string& dir) {
  if (dir.empty()) throw UsageError("--data (or data_dir in the config) is required");
  auto ds = data::load_dataset(dir);
  if (ds.empty()) fail(ErrorCode::EmptyDataset, "no samples in " + dir);
  return ds;
}

data::Dataset pick_split(const data::Dataset& ds, const std::string& which, const data::SplitRatios& r,
                         std::uint64_t seed) {
  if (which == "all") return ds;
  const auto s = data::split_by_patient(ds, r, seed);
  if (which == "train") return data::subset(ds, s.train);
  if (which == "val") return data::subset(ds, s.val);
  if (which == "test") return data::subset(ds, s.test);
  throw UsageError("--split must be all, train, val or test");
}

cin::CinModel<Real> model_from(const std::string& checkpoint_path, const trainer::TrainConfig& fallback) {
  if (!checkpoint_path.empty()) return checkpoint::load<Real>(checkpoint_path).model;
  return cin::CinModel<Real>(fallback.model);
}

void print_eval(const std::string& label, const trainer::EvalResult& r) {
  std::cout << label;
  for (int t = 0; t < kNumRegions; ++t) std::cout << "  " << kRegionKeys[t] << "=" << fmt(r.dice[t]);
  std::cout << "  average=" << fmt(r.average) << "\n";
}

std::vector<std::uint64_t> seeds_of(const std::vector<std::uint64_t>& given, std::uint64_t fallback) {
  return given.empty() ? std::vector<std::uint64_t>{fallback} : given;
}

// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out, int patients, int frames, std::uint64_t seed, const synth::SynthParams& p) {
  const fs::path dir = or_default(out, "synth");
  const auto ds = synth::generate(patients, frames, seed, p);
  data::save_dataset(dir, ds);
  std::cout << "wrote " << ds.size() << " frames from " << patients << " patients to " << dir.string() << "\n";
  return 0;
}

int cmd_preprocess(const std::string& image, const std::vector<std::string>& pipelines, const std::string& ckpt,
                   const std::string& out, const imgproc::ClaheParams& clahe) {
  const auto img = png::read_gray(image);
  const fs::path dir = or_default(out, "preprocess");
  fs::create_directories(dir);
  const std::string stem = fs::path(image).stem().string();
  if (pipelines.empty() && ckpt.empty()) throw UsageError("give --pipeline and/or --checkpoint");
  for (const auto& name : pipelines) {
    const auto spec = imgproc::PipelineSpec::parse(name, clahe);
    const auto path = dir / (stem + "_" + file_tag(spec.to_string()) + ".png");
    save_png(path, imgproc::apply_pipeline(spec, img));
    std::cout << path.string() << "\n";
  }
  if (!ckpt.empty()) {
    const auto model = checkpoint::load<Real>(ckpt).model;
    const auto stack = pen::make_batch<Real>({pen::pen_apply_algorithms<Real>(img, model.config().pen)});
    const auto xbar = model.enhance({nullptr, false}, stack);
    const std::size_t plane = img.size();
    std::vector<double> avg(plane, 0.0);
    auto to_gray = [&](auto value_at) {
      GrayImage g(img.width(), img.height());
      for (std::size_t j = 0; j < plane; ++j) g.pixels()[j] = static_cast<std::uint8_t>(std::lround(std::clamp(value_at(j), 0.0, 1.0) * 255.0));
      return g;
    };
    for (int c = 0; c < pen::kPenOutChannels; ++c) {
      const Real* src = xbar.data() + c * plane;
      for (std::size_t j = 0; j < plane; ++j) avg[j] += src[j] / pen::kPenOutChannels;
      const auto path = dir / (stem + "_pen" + std::to_string(c) + ".png");
      save_png(path, to_gray([&](std::size_t j) { return static_cast<double>(src[j]); }));
      std::cout << path.string() << "\n";
    }
    const auto path = dir / (stem + "_pen_avg.png");
    save_png(path, to_gray([&](std::size_t j) { return avg[j]; }));
    std::cout << path.string() << "\n";
  }
  return 0;
}

int cmd_train(const TrainFlags& flags, const std::string& out) {
  auto cfg = flags.resolve();
  const auto ds = load_required(cfg.data_dir);
  const fs::path dir = or_default(out.empty() ? cfg.out_dir : out, "train");
  fs::create_directories(dir);
  cfg.out_dir = dir.string();
  write_text(dir / "config.json", trainer::to_json(cfg).dump(2) + "\n");
  const auto splits = trainer::make_splits(ds, cfg.split, cfg.seed);
  std::cout << "patients split " << data::patients_of(splits.train).size() << "/"
            << data::patients_of(splits.val).size() << "/" << data::patients_of(splits.test).size() << ", "
            << splits.train.size() << " training frames\n";
  std::ofstream log(dir / "train_log.jsonl", std::ios::trunc);
  auto res = trainer::train<Real>(cfg, splits.train, splits.val,
                                 [&](const trainer::EpochLog& e, const cin::CinModel<Real>&) {
                                   log << trainer::to_json(e).dump() << "\n" << std::flush;
                                   std::cout << "epoch " << e.epoch << " step " << e.step << " loss "
                                             << fmt(e.train_loss);
                                   if (e.val) std::cout << " val_bolus " << fmt(e.val->bolus());
                                   std::cout << "\n";
                                   return true;
                                 });
  checkpoint::save(dir / "model.ckpt", res.model, &res.optimizer,
                   {{"best_epoch", res.best_epoch}, {"best_val_bolus", res.best_val_bolus}, {"steps", res.steps}});
  if (!splits.test.empty()) {
    const auto r = trainer::evaluate(res.model, splits.test, cfg.theta);
    trainer::write_csv(dir / "test_metrics.csv", {"model", {}, {trainer::row_from("test", r)}});
    print_eval("test", r);
  }
  std::cout << "checkpoint " << (dir / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const TrainFlags& flags, const std::string& ckpt, const std::string& split, const std::string& out) {
  auto cfg = flags.resolve();
  auto model = model_from(ckpt, cfg);
  const auto ds = pick_split(load_required(cfg.data_dir), split, cfg.split, cfg.seed);
  const auto r = trainer::evaluate(model, ds, cfg.theta);
  const fs::path path = or_default(out, "eval.csv");
  trainer::Table t{"model", {}, {trainer::row_from(ckpt.empty() ? "untrained" : fs::path(ckpt).stem().string(), r)}};
  trainer::write_csv(path, t);
  print_table(t);
  std::cout << "wrote " << path.string() << "\n";
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::vector<std::string>& images, const std::string& data_dir,
              double theta, const std::string& out) {
  const auto model = checkpoint::load<Real>(ckpt).model;
  const fs::path dir = or_default(out, "infer");
  data::Dataset inputs;
  const bool have_gt = !data_dir.empty();
  if (have_gt) inputs = data::load_dataset(data_dir);
  for (const auto& p : images) {
    data::Sample s;
    s.image = png::read_gray(p);
    s.frame_id = fs::path(p).stem().string();
    inputs.push_back(std::move(s));
  }
  if (inputs.empty()) throw UsageError("give --image and/or --data");
  std::vector<MaskSet> preds;
  std::vector<const MaskSet*> truths;
  for (const auto& s : inputs) {
    const auto pred = cin::predict(model, s.image, theta);
    const bool gt = !s.masks.data.empty();
    for (int t = 0; t < kNumRegions; ++t) {
      const std::string key(kRegionKeys[t]);
      save_png(dir / "masks" / key / (s.frame_id + ".png"), pred.masks.to_image(t));
      // Without ground truth every predicted pixel is drawn as a hit.
      const std::uint8_t* truth = gt ? s.masks.channel(t) : pred.masks.channel(t);
      save_png(dir / "overlays" / key / (s.frame_id + ".png"),
                     overlay::render(s.image, pred.masks.channel(t), truth));
    }
    if (gt) {
      preds.push_back(pred.masks);
      truths.push_back(&s.masks);
      trainer::EvalResult one = trainer::score_predictions({pred.masks}, {&s.masks});
      print_eval(s.frame_id, one);
    }
  }
  if (!preds.empty()) {
    const auto r = trainer::score_predictions(preds, truths);
    print_eval("mean", r);
    trainer::write_csv(dir / "dice.csv", {"model", {}, {trainer::row_from(fs::path(ckpt).stem().string(), r)}});
  }
  std::cout << "wrote " << inputs.size() << " predictions to " << dir.string() << "\n";
  return 0;
}

int cmd_gradcam(const TrainFlags& flags, const std::string& ckpt, const std::string& block_text,
                const std::string& region, const std::string& target, int max_images, const std::string& out) {
  auto cfg = flags.resolve();
  const auto model = model_from(ckpt, cfg);
  auto ds = load_required(cfg.data_dir);
  if (max_images > 0 && static_cast<int>(ds.size()) > max_images) ds.resize(max_images);
  gradcam::Options opt;
  if (target == "full") opt.target = gradcam::Target::FullMap;
  else if (target == "masked") opt.target = gradcam::Target::GtMasked;
  else throw UsageError("--target must be full or masked");
  const Region r = region_from_key(region);
  std::vector<int> blocks;
  if (block_text == "all") {
    for (int b = 1; b <= gradcam::kNumBlocks; ++b) blocks.push_back(b);
  } else {
    try {
      blocks.push_back(std::stoi(block_text));
    } catch (const std::exception&) {
      throw UsageError("--block must be a number or 'all'");
    }
  }
  const fs::path dir = or_default(out, "gradcam");
  std::vector<std::vector<gradcam::Heatmap>> maps;
  std::vector<const MaskSet*> truths;
  for (const auto& s : ds) {
    const auto stack = pen::pen_apply_algorithms<Real>(s.image, model.config().pen);
    std::vector<gradcam::Heatmap> per;
    for (int b : blocks) {
      auto hm = gradcam::gradcam_map(model, stack, r, b, &s.masks, opt);
      const std::string name = s.frame_id + "_block" + std::to_string(b);
      save_png(dir / (name + ".png"), gradcam::colorize(hm));
      save_png(dir / (name + "_overlay.png"), gradcam::blend(s.image, hm));
      per.push_back(std::move(hm));
    }
    maps.push_back(std::move(per));
    truths.push_back(&s.masks);
  }
  const auto ranking = gradcam::rank_regions(maps, truths);
  std::string csv = "rank,region,importance\n";
  for (std::size_t i = 0; i < ranking.size(); ++i) {
    csv += std::to_string(i + 1) + "," + std::string(key_of(ranking[i].region)) + "," + fmt(ranking[i].importance) + "\n";
  }
  write_text(dir / "region_importance.csv", csv);
  std::cout << csv << "wrote heatmaps for " << ds.size() << " images to " << dir.string() << "\n";
  return 0;
}

int cmd_ablate(const std::string& kind, const TrainFlags& flags, const std::vector<int>& stage_list,
               const std::vector<std::uint64_t>& seeds, const std::string& out) {
  auto cfg = flags.resolve();
  const auto ds = load_required(cfg.data_dir);
  const auto splits = trainer::make_splits(ds, cfg.split, cfg.seed);
  const auto seed_list = seeds_of(seeds, cfg.seed);
  const fs::path dir = or_default(out, "ablate");
  auto progress = [](const std::string& label) { std::cerr << "done: " << label << "\n"; };
  if (kind == "stages") {
    const auto t = trainer::ablate_stages<Real>(cfg, splits, stage_list, seed_list, progress);
    trainer::write_csv(dir / "stages.csv", t);
    print_table(t);
  } else if (kind == "preprocessing") {
    const auto t = trainer::ablate_preprocessing<Real>(cfg, splits, seed_list, progress);
    trainer::write_csv(dir / "preprocessing_single.csv", t.single);
    trainer::write_csv(dir / "preprocessing_incremental.csv", t.incremental);
    print_table(t.single);
    print_table(t.incremental);
  } else {
    const auto t = trainer::ablate_context<Real>(cfg, splits, trainer::default_context_choices(), seed_list, progress);
    trainer::write_csv(dir / "context.csv", t);
    print_table(t);
  }
  std::cout << "wrote tables to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PECI-Net: preprocessing ensemble + cascaded inference for swallow-study segmentation"};
  app.require_subcommand(1);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out;
  int patients = 10, frames = 5;
  std::uint64_t synth_seed = 0;
  synth::SynthParams sp;
  synth_cmd->add_option("--out", synth_out, "output directory");
  synth_cmd->add_option("--patients", patients)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--frames", frames)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_seed);
  synth_cmd->add_option("--ambiguity", sp.ambiguity, "0 = clear bolus, 1 = nearly invisible")->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--size", sp.size)->check(CLI::Range(16, 4096));
  synth_cmd->add_option("--noise", sp.noise_sigma)->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--decoys", sp.max_decoys)->check(CLI::NonNegativeNumber);

  // preprocess
  auto* pre_cmd = app.add_subcommand("preprocess", "write enhanced variants of an image");
  std::string pre_image, pre_ckpt, pre_out;
  std::vector<std::string> pre_pipes;
  imgproc::ClaheParams clahe;
  double clip = clahe.clip_limit;
  pre_cmd->add_option("--image", pre_image)->required();
  pre_cmd->add_option("--pipeline", pre_pipes, "e.g. clahe or clahe,sharpen; repeatable");
  pre_cmd->add_option("--checkpoint", pre_ckpt, "write the learned PEN channels and their average");
  pre_cmd->add_option("--out", pre_out);
  pre_cmd->add_option("--tiles", clahe.tiles_x, "CLAHE tiles per side");
  pre_cmd->add_option("--clip", clip, "CLAHE clip limit; 0 disables clipping");

  // train / eval / gradcam / ablate share the config flags
  auto* train_cmd = app.add_subcommand("train", "train a model");
  TrainFlags train_flags;
  std::string train_out;
  train_flags.attach(train_cmd);
  train_cmd->add_option("--out", train_out, "run directory");

  auto* eval_cmd = app.add_subcommand("eval", "per-region Dice table");
  TrainFlags eval_flags;
  std::string eval_ckpt, eval_split = "all", eval_out;
  eval_flags.attach(eval_cmd);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "omit to score a freshly initialized model");
  eval_cmd->add_option("--split", eval_split, "all | train | val | test");
  eval_cmd->add_option("--out", eval_out, "CSV path");

  auto* infer_cmd = app.add_subcommand("infer", "masks and overlays for images");
  std::string infer_ckpt, infer_data, infer_out;
  std::vector<std::string> infer_images;
  double infer_theta = 0.5;
  infer_cmd->add_option("--checkpoint", infer_ckpt)->required();
  infer_cmd->add_option("--image", infer_images, "grayscale PNG; repeatable");
  infer_cmd->add_option("--data", infer_data, "dataset directory, for Dice against its masks");
  infer_cmd->add_option("--theta", infer_theta)->check(CLI::Range(0.0, 1.0));
  infer_cmd->add_option("--out", infer_out);

  auto* cam_cmd = app.add_subcommand("gradcam", "GradCAM heatmaps and region ranking");
  TrainFlags cam_flags;
  std::string cam_ckpt, cam_block = "all", cam_region = "bolus", cam_target = "full", cam_out;
  int cam_max = 0;
  cam_flags.attach(cam_cmd);
  cam_cmd->add_option("--checkpoint", cam_ckpt);
  cam_cmd->add_option("--block", cam_block, "decoder block 1..4 or all");
  cam_cmd->add_option("--region", cam_region, "target region");
  cam_cmd->add_option("--target", cam_target, "full | masked");
  cam_cmd->add_option("--max-images", cam_max);
  cam_cmd->add_option("--out", cam_out);

  auto* ablate_cmd = app.add_subcommand("ablate", "ablation tables");
  ablate_cmd->require_subcommand(1);
  struct AblateArgs {
    TrainFlags flags;
    std::vector<int> list{1, 2, 3, 4};
    std::vector<std::uint64_t> seeds;
    std::string out;
  };
  AblateArgs ab[3];
  const char* kinds[3] = {"stages", "preprocessing", "context"};
  CLI::App* ab_cmds[3];
  for (int k = 0; k < 3; ++k) {
    ab_cmds[k] = ablate_cmd->add_subcommand(kinds[k]);
    ab[k].flags.attach(ab_cmds[k]);
    ab_cmds[k]->add_option("--seeds", ab[k].seeds, "comma-separated seeds")->delimiter(',');
    ab_cmds[k]->add_option("--out", ab[k].out);
    if (k == 0) ab_cmds[k]->add_option("--list", ab[k].list, "stage counts, e.g. 1,2")->delimiter(',');
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth_out, patients, frames, synth_seed, sp);
    if (*pre_cmd) {
      clahe.tiles_y = clahe.tiles_x;
      clahe.clip_limit = clip > 0 ? clip : imgproc::kNoClip;
      return cmd_preprocess(pre_image, pre_pipes, pre_ckpt, pre_out, clahe);
    }
    if (*train_cmd) return cmd_train(train_flags, train_out);
    if (*eval_cmd) return cmd_eval(eval_flags, eval_ckpt, eval_split, eval_out);
    if (*infer_cmd) return cmd_infer(infer_ckpt, infer_images, infer_data, infer_theta, infer_out);
    if (*cam_cmd) return cmd_gradcam(cam_flags, cam_ckpt, cam_block, cam_region, cam_target, cam_max, cam_out);
    for (int k = 0; k < 3; ++k) {
      if (*ab_cmds[k]) return cmd_ablate(kinds[k], ab[k].flags, ab[k].list, ab[k].seeds, ab[k].out);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::BadParams || e.code() == ErrorCode::ConfigInvalid ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
