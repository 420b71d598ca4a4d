#pragma once

// Dataset manifest (segment list, activities, fold/test assignment) and the
// segment-level k-fold split with one rumination segment per fold.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "jmfusion/error.hpp"
#include "jmfusion/signals.hpp"

namespace jmf {

inline constexpr int kTestFold = -1;

struct ManifestEntry {
  std::string id;
  Activity activity = Activity::grazing;
  int fold = kTestFold;  // 0..k-1, or kTestFold for the held-out test list

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::vector<ManifestEntry> segments;
  std::uint64_t seed = 0;
  std::string config_hash;
  int folds = 5;

  std::vector<std::string> fold_ids(int fold) const {
    std::vector<std::string> out;
    for (const auto& s : segments)
      if (s.fold == fold) out.push_back(s.id);
    return out;
  }
  std::vector<std::string> test_ids() const { return fold_ids(kTestFold); }
  std::vector<std::string> train_ids_excluding(int fold) const {
    std::vector<std::string> out;
    for (const auto& s : segments)
      if (s.fold != kTestFold && s.fold != fold) out.push_back(s.id);
    return out;
  }
};

// Assigns each training segment a fold. Rumination segments are dealt one
// per fold first (extras continue round-robin), then grazing segments fill
// folds up to sizes that differ by at most one.
inline std::vector<int> kfold_split(const std::vector<Activity>& activities, int k) {
  require(k >= 1, ErrorKind::precondition, "kfold_split: k must be >= 1");
  const auto n = static_cast<int>(activities.size());
  require(n >= k, ErrorKind::precondition,
          "kfold_split: " + std::to_string(n) + " segments cannot fill " + std::to_string(k) + " folds");
  const auto rum = static_cast<int>(std::count(activities.begin(), activities.end(), Activity::rumination));
  require(rum >= k, ErrorKind::precondition,
          "kfold_split: " + std::to_string(rum) + " rumination segments, need at least " +
              std::to_string(k));
  std::vector<int> target(static_cast<std::size_t>(k), n / k);
  for (int f = 0; f < n % k; ++f) ++target[static_cast<std::size_t>(f)];
  std::vector<int> size(static_cast<std::size_t>(k), 0);
  std::vector<int> fold(activities.size(), -1);
  int next = 0;
  for (std::size_t i = 0; i < activities.size(); ++i) {
    if (activities[i] != Activity::rumination) continue;
    fold[i] = next;
    ++size[static_cast<std::size_t>(next)];
    next = (next + 1) % k;
  }
  for (std::size_t i = 0; i < activities.size(); ++i) {
    if (fold[i] != -1) continue;
    int f = 0;
    while (f < k && size[static_cast<std::size_t>(f)] >= target[static_cast<std::size_t>(f)]) ++f;
    if (f == k)  // surplus rumination pushed a fold past its target
      f = static_cast<int>(std::min_element(size.begin(), size.end()) - size.begin());
    fold[i] = f;
    ++size[static_cast<std::size_t>(f)];
  }
  return fold;
}

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : m.segments) {
    nlohmann::json e{{"id", s.id}, {"activity", to_string(s.activity)}};
    if (s.fold == kTestFold)
      e["test"] = true;
    else
      e["fold"] = s.fold;
    segs.push_back(e);
  }
  return {{"segments", segs}, {"seed", m.seed}, {"config_hash", m.config_hash}, {"folds", m.folds}};
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.value("config_hash", std::string{});
    m.folds = j.value("folds", 5);
    for (const auto& e : j.at("segments")) {
      ManifestEntry s;
      s.id = e.at("id").get<std::string>();
      s.activity = activity_from_string(e.at("activity").get<std::string>());
      s.fold = e.contains("fold") ? e.at("fold").get<int>() : kTestFold;
      m.segments.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("manifest: ") + e.what());
  }
  return m;
}

inline void write_manifest(const Manifest& m, const std::filesystem::path& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), ErrorKind::io, "cannot write " + path.string());
  os << to_json(m).dump(2) << '\n';
}

inline Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
  return manifest_from_json(j);
}

}  // namespace jmf
