#pragma once

// JSON (de)serialization of the model, PEN and training configurations.
// Missing keys keep their defaults, so partial config files are fine.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "peci/cin.hpp"
#include "peci/data.hpp"
#include "peci/losses.hpp"
#include "peci/nn/optim.hpp"

namespace peci::config {

using nlohmann::json;

namespace detail {

template <class V>
void get_if(const json& j, const char* key, V& out) {
  if (!j.contains(key) || j[key].is_null()) return;
  try {
    out = j[key].get<V>();
  } catch (const json::exception& e) {
    fail(ErrorCode::ConfigInvalid, std::string("config key '") + key + "': " + e.what());
  }
}

inline void require_object(const json& j, const char* what) {
  if (!j.is_object()) fail(ErrorCode::ConfigInvalid, std::string(what) + " must be a JSON object");
}

}  // namespace detail

inline json to_json(const imgproc::ClaheParams& p) {
  json j{{"tiles_x", p.tiles_x}, {"tiles_y", p.tiles_y}, {"bins", p.bins}};
  // Infinity has no JSON literal; null means "no clipping".
  j["clip_limit"] = std::isinf(p.clip_limit) ? json(nullptr) : json(p.clip_limit);
  return j;
}

inline imgproc::ClaheParams clahe_from_json(const json& j) {
  detail::require_object(j, "clahe");
  imgproc::ClaheParams p;
  detail::get_if(j, "tiles_x", p.tiles_x);
  detail::get_if(j, "tiles_y", p.tiles_y);
  detail::get_if(j, "bins", p.bins);
  if (j.contains("clip_limit")) {
    if (j["clip_limit"].is_null()) {
      p.clip_limit = imgproc::kNoClip;
    } else {
      detail::get_if(j, "clip_limit", p.clip_limit);
    }
  }
  p.validate();
  return p;
}

/// CLAHE parameters shared by a pipeline list (the first CLAHE step's, or defaults).
inline imgproc::ClaheParams shared_clahe(const std::vector<imgproc::PipelineSpec>& pipelines) {
  for (const auto& p : pipelines)
    for (const auto& s : p.steps)
      if (s.kind == imgproc::StepKind::Clahe) return s.clahe;
  return {};
}

inline json to_json(const pen::PenConfig& c) {
  json pipes = json::array();
  for (const auto& p : c.pipelines) pipes.push_back(p.to_string());
  return {{"mode", c.mode == pen::PenMode::Learned ? "learned" : "replicate"},
          {"pipelines", pipes},
          {"clahe", to_json(shared_clahe(c.pipelines))}};
}

inline pen::PenConfig pen_from_json(const json& j) {
  detail::require_object(j, "pen");
  pen::PenConfig c;
  std::string mode = "learned";
  detail::get_if(j, "mode", mode);
  if (mode == "learned") {
    c.mode = pen::PenMode::Learned;
  } else if (mode == "replicate") {
    c.mode = pen::PenMode::Replicate;
  } else {
    fail(ErrorCode::ConfigInvalid, "pen.mode must be 'learned' or 'replicate'");
  }
  imgproc::ClaheParams clahe;
  if (j.contains("clahe")) clahe = clahe_from_json(j["clahe"]);
  if (j.contains("pipelines")) {
    std::vector<std::string> names;
    detail::get_if(j, "pipelines", names);
    c.pipelines.clear();
    try {
      for (const auto& n : names) c.pipelines.push_back(imgproc::PipelineSpec::parse(n, clahe));
    } catch (const Error& e) {
      fail(ErrorCode::ConfigInvalid, e.what());
    }
  } else {
    c.pipelines = imgproc::default_pipelines(clahe);
  }
  if (c.mode == pen::PenMode::Replicate && c.pipelines.empty()) c.pipelines = pen::PenConfig::replicate().pipelines;
  c.validate();
  return c;
}

inline json to_json(const cin::CinConfig& c) {
  json ctx = json::array();
  for (const auto& set : c.context) {
    json names = json::array();
    for (int t : set) names.push_back(std::string(kRegionKeys.at(t)));
    ctx.push_back(names);
  }
  return {{"backbone", cin::to_string(c.backbone)},
          {"num_stages", c.num_stages},
          {"context", ctx},
          {"input_size", c.input_size},
          {"width", c.width},
          {"depth", c.depth},
          {"heads", c.heads},
          {"mlp_hidden", c.mlp_hidden},
          {"seed", c.seed},
          {"pen", to_json(c.pen)}};
}

inline cin::CinConfig cin_from_json(const json& j) {
  detail::require_object(j, "model");
  cin::CinConfig c;
  std::string backbone = cin::to_string(c.backbone);
  detail::get_if(j, "backbone", backbone);
  try {
    c.backbone = cin::backbone_from_string(backbone);
  } catch (const Error& e) {
    fail(ErrorCode::ConfigInvalid, e.what());
  }
  if (c.backbone == cin::Backbone::Full) c.input_size = 224;
  detail::get_if(j, "num_stages", c.num_stages);
  detail::get_if(j, "input_size", c.input_size);
  detail::get_if(j, "width", c.width);
  detail::get_if(j, "depth", c.depth);
  detail::get_if(j, "heads", c.heads);
  detail::get_if(j, "mlp_hidden", c.mlp_hidden);
  detail::get_if(j, "seed", c.seed);
  if (j.contains("context")) {
    // Either a list of region-name lists, or one string applied to every transition.
    const auto& ctx = j["context"];
    c.context.clear();
    if (ctx.is_string()) {
      for (int i = 0; i + 1 < c.num_stages; ++i) c.context.push_back(parse_region_list(ctx.get<std::string>()));
    } else if (ctx.is_array()) {
      for (const auto& set : ctx) {
        std::vector<int> idx;
        if (set.is_string()) {
          idx = parse_region_list(set.get<std::string>());
        } else if (set.is_array()) {
          for (const auto& name : set) {
            if (!name.is_string()) fail(ErrorCode::ConfigInvalid, "context entries must be region names");
            idx.push_back(index_of(region_from_key(name.get<std::string>())));
          }
        } else {
          fail(ErrorCode::ConfigInvalid, "context sets must be lists of region names");
        }
        c.context.push_back(idx);
      }
    } else if (!ctx.is_null()) {
      fail(ErrorCode::ConfigInvalid, "context must be a list");
    }
  }
  if (j.contains("pen")) c.pen = pen_from_json(j["pen"]);
  c.validate();
  return c;
}

inline json to_json(const losses::LossWeights& w) { return w.w; }

}  // namespace peci::config
