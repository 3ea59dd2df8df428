#pragma once

// Samples, the on-disk dataset layout and patient-level splitting.
//
//   <root>/manifest.jsonl               one JSON object per frame
//   <root>/images/<frame_id>.png        8-bit grayscale frame
//   <root>/masks/<region>/<frame_id>.png  0/255 binary mask per region

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "peci/error.hpp"
#include "peci/image.hpp"
#include "peci/masks.hpp"
#include "peci/png_io.hpp"
#include "peci/regions.hpp"

namespace peci::data {

namespace fs = std::filesystem;

struct Sample {
  GrayImage image;
  MaskSet masks;
  std::string patient_id;
  std::string frame_id;
};

using Dataset = std::vector<Sample>;

struct ManifestEntry {
  std::string image;                            // relative to the dataset root
  std::array<std::string, kNumRegions> masks;   // canonical region order
  std::string patient_id;
  std::string frame_id;
};

inline nlohmann::json to_json(const ManifestEntry& e) {
  nlohmann::json masks = nlohmann::json::object();
  for (int t = 0; t < kNumRegions; ++t) masks[std::string(kRegionKeys[t])] = e.masks[t];
  return {{"frame_id", e.frame_id}, {"patient_id", e.patient_id}, {"image", e.image}, {"masks", masks}};
}

inline ManifestEntry entry_from_json(const nlohmann::json& j, std::size_t line) {
  const std::string where = "manifest line " + std::to_string(line);
  auto str = [&](const nlohmann::json& obj, const std::string& key) {
    if (!obj.contains(key) || !obj[key].is_string()) fail(ErrorCode::BadManifest, where + ": missing string '" + key + "'");
    return obj[key].get<std::string>();
  };
  if (!j.is_object()) fail(ErrorCode::BadManifest, where + ": not an object");
  ManifestEntry e;
  e.frame_id = str(j, "frame_id");
  e.patient_id = str(j, "patient_id");
  e.image = str(j, "image");
  if (e.patient_id.empty()) fail(ErrorCode::BadManifest, where + ": empty patient_id");
  if (!j.contains("masks") || !j["masks"].is_object()) fail(ErrorCode::BadManifest, where + ": missing masks");
  for (int t = 0; t < kNumRegions; ++t) e.masks[t] = str(j["masks"], std::string(kRegionKeys[t]));
  return e;
}

inline std::vector<ManifestEntry> read_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.jsonl";
  if (!fs::exists(path)) fail(ErrorCode::MissingFile, path.string());
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorCode::BadManifest, "manifest line " + std::to_string(n) + ": " + ex.what());
    }
    out.push_back(entry_from_json(j, n));
  }
  return out;
}

/// Reads a 0/255 mask PNG into one MaskSet channel.
inline void read_mask(const fs::path& path, int width, int height, MaskSet& masks, int t) {
  GrayImage m = png::read_gray(path);
  if (m.width() != width || m.height() != height) {
    fail(ErrorCode::BadMaskShape, path.string() + " is " + std::to_string(m.width()) + "x" +
                                      std::to_string(m.height()) + ", image is " + std::to_string(width) + "x" +
                                      std::to_string(height));
  }
  std::uint8_t* dst = masks.channel(t);
  const auto px = m.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (px[i] != 0 && px[i] != 255) {
      fail(ErrorCode::BadMaskShape, path.string() + " has non-binary value " + std::to_string(px[i]));
    }
    dst[i] = px[i] ? 1 : 0;
  }
}

/// Loads every manifest entry in manifest order.
inline Dataset load_dataset(const fs::path& root) {
  Dataset out;
  for (const auto& e : read_manifest(root)) {
    const fs::path img_path = root / e.image;
    Sample s;
    s.image = png::read_gray(img_path);
    s.masks = MaskSet(s.image.width(), s.image.height());
    for (int t = 0; t < kNumRegions; ++t) read_mask(root / e.masks[t], s.image.width(), s.image.height(), s.masks, t);
    s.patient_id = e.patient_id;
    s.frame_id = e.frame_id;
    out.push_back(std::move(s));
  }
  return out;
}

inline ManifestEntry layout_entry(const Sample& s) {
  ManifestEntry e;
  e.frame_id = s.frame_id;
  e.patient_id = s.patient_id;
  e.image = "images/" + s.frame_id + ".png";
  for (int t = 0; t < kNumRegions; ++t) e.masks[t] = "masks/" + std::string(kRegionKeys[t]) + "/" + s.frame_id + ".png";
  return e;
}

inline void save_dataset(const fs::path& root, const Dataset& dataset) {
  std::error_code ec;
  fs::create_directories(root / "images", ec);
  for (int t = 0; t < kNumRegions; ++t) fs::create_directories(root / "masks" / std::string(kRegionKeys[t]), ec);
  if (ec) fail(ErrorCode::IoError, "cannot create dataset directories under " + root.string());
  std::unordered_set<std::string> seen;
  std::ofstream manifest(root / "manifest.jsonl", std::ios::trunc);
  if (!manifest) fail(ErrorCode::IoError, "cannot write manifest under " + root.string());
  for (const auto& s : dataset) {
    if (s.patient_id.empty()) fail(ErrorCode::BadManifest, "sample " + s.frame_id + " has no patient_id");
    if (!seen.insert(s.frame_id).second) fail(ErrorCode::BadManifest, "duplicate frame_id " + s.frame_id);
    if (s.masks.width != s.image.width() || s.masks.height != s.image.height()) {
      fail(ErrorCode::BadMaskShape, "mask size differs from image for " + s.frame_id);
    }
    const auto e = layout_entry(s);
    png::write_gray(root / e.image, s.image);
    for (int t = 0; t < kNumRegions; ++t) png::write_gray(root / e.masks[t], s.masks.to_image(t));
    manifest << to_json(e).dump() << '\n';
  }
  if (!manifest) fail(ErrorCode::IoError, "failed writing manifest under " + root.string());
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitRatios {
  int train = 8;
  int val = 1;
  int test = 1;
};

/// Sample indices per split, each list in dataset order.
struct Split {
  std::vector<std::size_t> train, val, test;
};

/// Distinct patient ids in order of first appearance.
inline std::vector<std::string> patients_of(const Dataset& dataset) {
  std::vector<std::string> out;
  std::unordered_set<std::string> seen;
  for (const auto& s : dataset) {
    if (seen.insert(s.patient_id).second) out.push_back(s.patient_id);
  }
  return out;
}

/// Shuffles patients with the seed and cuts them by cumulative ratio.
/// Validation and test get floor(P * r / sum) patients, at least one each
/// when their ratio is positive; train gets the remainder.
inline Split split_by_patient(const Dataset& dataset, SplitRatios ratios = {}, std::uint64_t seed = 0) {
  if (ratios.train <= 0 || ratios.val < 0 || ratios.test < 0) fail(ErrorCode::BadParams, "invalid split ratios");
  auto patients = patients_of(dataset);
  const int p = static_cast<int>(patients.size());
  if (p < 3) fail(ErrorCode::TooFewPatients, "need at least 3 patients, have " + std::to_string(p));
  std::mt19937_64 rng(seed);
  std::shuffle(patients.begin(), patients.end(), rng);
  const int total = ratios.train + ratios.val + ratios.test;
  auto share = [&](int r) { return r > 0 ? std::max(1, p * r / total) : 0; };
  const int n_val = share(ratios.val);
  const int n_test = share(ratios.test);
  const int n_train = p - n_val - n_test;
  if (n_train < 1) fail(ErrorCode::TooFewPatients, "no patients left for training");
  std::unordered_map<std::string, int> which;
  for (int i = 0; i < p; ++i) which[patients[i]] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);
  Split split;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    switch (which[dataset[i].patient_id]) {
      case 0: split.train.push_back(i); break;
      case 1: split.val.push_back(i); break;
      default: split.test.push_back(i); break;
    }
  }
  return split;
}

inline Dataset subset(const Dataset& dataset, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(dataset.at(i));
  return out;
}

}  // namespace peci::data
