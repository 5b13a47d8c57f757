#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smokeseg/errors.hpp"

// Dataset manifest: one JSON object per line, every path relative to the
// manifest's own directory so a dataset tree can be moved wholesale.

namespace smokeseg {

struct CompositeRecord {
  std::string background;  // source background image
  std::string smoke;       // source RGBA smoke image
  double beta = 1.0;
  double gt_threshold = 0.1;
  std::uint64_t seed = 0;
  std::string composite;  // output paths, empty on skipped records
  std::string mask;
  std::string skip_reason;  // nonempty marks a record the builder skipped

  bool usable() const { return skip_reason.empty(); }
};

inline nlohmann::json to_json(const CompositeRecord& r) {
  nlohmann::json j{{"background", r.background}, {"smoke", r.smoke},       {"beta", r.beta},
                   {"gt_threshold", r.gt_threshold}, {"seed", r.seed},    {"composite", r.composite},
                   {"mask", r.mask}};
  if (!r.skip_reason.empty()) j["skip_reason"] = r.skip_reason;
  return j;
}

inline void write_manifest(const std::vector<CompositeRecord>& records,
                           const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& r : records) out << to_json(r).dump() << "\n";
  if (!out) throw IoError("short write on " + path.string());
}

inline std::vector<CompositeRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<CompositeRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
    }
    CompositeRecord r;
    for (const auto& [key, value] : j.items()) {
      if (key == "background") r.background = value.get<std::string>();
      else if (key == "smoke") r.smoke = value.get<std::string>();
      else if (key == "beta") r.beta = value.get<double>();
      else if (key == "gt_threshold") r.gt_threshold = value.get<double>();
      else if (key == "seed") r.seed = value.get<std::uint64_t>();
      else if (key == "composite") r.composite = value.get<std::string>();
      else if (key == "mask") r.mask = value.get<std::string>();
      else if (key == "skip_reason") r.skip_reason = value.get<std::string>();
      else throw IoError(path.string() + ":" + std::to_string(lineno) + ": unknown key \"" + key + "\"");
    }
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace smokeseg
