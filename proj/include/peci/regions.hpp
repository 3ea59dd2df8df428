#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "peci/error.hpp"

namespace peci {

/// Canonical region order; the channel index of every mask and logit map.
enum class Region : int { Bolus = 0, Mandible, HyoidBone, VocalFold, CervicalSpine, SoftTissue };

inline constexpr int kNumRegions = 6;

inline constexpr std::array<std::string_view, kNumRegions> kRegionKeys{
    "bolus", "mandible", "hyoid_bone", "vocal_fold", "cervical_spine", "soft_tissue"};

inline constexpr std::array<std::string_view, kNumRegions> kRegionTitles{
    "Bolus", "Mandible", "Hyoid Bone", "Vocal Fold", "Cervical Spine", "Soft Tissue"};

constexpr int index_of(Region r) { return static_cast<int>(r); }
inline std::string_view key_of(Region r) { return kRegionKeys[index_of(r)]; }

inline Region region_from_key(std::string_view key) {
  for (int i = 0; i < kNumRegions; ++i) {
    if (kRegionKeys[i] == key) return static_cast<Region>(i);
  }
  fail(ErrorCode::ConfigInvalid, "unknown region '" + std::string(key) + "'");
}

/// Parses "cervical_spine,mandible" (or "all") into channel indices.
inline std::vector<int> parse_region_list(std::string_view text) {
  std::vector<int> out;
  if (text == "all") {
    for (int i = 0; i < kNumRegions; ++i) out.push_back(i);
    return out;
  }
  std::size_t start = 0;
  while (start < text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    if (end > start) out.push_back(index_of(region_from_key(text.substr(start, end - start))));
    start = end + 1;
  }
  return out;
}

inline std::string region_list_string(const std::vector<int>& idx) {
  std::string s;
  for (int i : idx) {
    if (!s.empty()) s += ',';
    s += kRegionKeys.at(i);
  }
  return s;
}

}  // namespace peci
