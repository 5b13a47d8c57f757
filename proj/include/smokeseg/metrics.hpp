#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "smokeseg/errors.hpp"
#include "smokeseg/image.hpp"

// Segmentation metrics over binary masks, plus the pixel-count frame
// detector. On {0,1} masks the per-pixel squared error reduces to the
// disagreement fraction, which is what mse_image computes.

namespace smokeseg {

namespace detail {

inline void check_same_dims(const BinaryMask& a, const BinaryMask& b, const char* what) {
  if (a.width != b.width || a.height != b.height) {
    throw ShapeError(std::string(what) + ": mask dimensions differ, " + std::to_string(a.width) +
                     "x" + std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                     std::to_string(b.height));
  }
}

}  // namespace detail

/// Intersection over union of the smoke pixels. Both masks empty means the
/// prediction agrees there is no smoke, scored 1.0.
inline double iou(const BinaryMask& pr, const BinaryMask& gt) {
  detail::check_same_dims(pr, gt, "iou");
  long long inter = 0, uni = 0;
  for (std::size_t i = 0; i < pr.data.size(); ++i) {
    inter += pr.data[i] & gt.data[i];
    uni += pr.data[i] | gt.data[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Fraction of disagreeing pixels (equals mean per-pixel squared error on
/// binary masks).
inline double mse_image(const BinaryMask& pr, const BinaryMask& gt) {
  detail::check_same_dims(pr, gt, "mse_image");
  long long diff = 0;
  for (std::size_t i = 0; i < pr.data.size(); ++i) diff += pr.data[i] != gt.data[i];
  return static_cast<double>(diff) / static_cast<double>(pr.data.size());
}

using MaskPair = std::pair<BinaryMask, BinaryMask>;  // (prediction, ground truth)

inline double miou(const std::vector<MaskPair>& pairs) {
  if (pairs.empty()) throw ConfigError("miou: empty pair list");
  double sum = 0.0;
  for (const auto& [pr, gt] : pairs) sum += iou(pr, gt);
  return sum / static_cast<double>(pairs.size());
}

inline double mmse(const std::vector<MaskPair>& pairs) {
  if (pairs.empty()) throw ConfigError("mmse: empty pair list");
  double sum = 0.0;
  for (const auto& [pr, gt] : pairs) sum += mse_image(pr, gt);
  return sum / static_cast<double>(pairs.size());
}

// ---- aggregate report ----

struct EvalReport {
  struct Entry {
    std::string name;
    double iou = 0.0;
    double mse = 0.0;
  };
  std::vector<Entry> per_image;
  double miou = 0.0;
  double mmse = 0.0;

  int n() const { return static_cast<int>(per_image.size()); }
};

inline EvalReport evaluate(const std::vector<MaskPair>& pairs,
                           const std::vector<std::string>& names) {
  if (pairs.empty()) throw ConfigError("evaluate: empty pair list");
  if (names.size() != pairs.size()) throw ConfigError("evaluate: name/pair count mismatch");
  EvalReport rep;
  double iou_sum = 0.0, mse_sum = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const double v_iou = iou(pairs[i].first, pairs[i].second);
    const double v_mse = mse_image(pairs[i].first, pairs[i].second);
    rep.per_image.push_back({names[i], v_iou, v_mse});
    iou_sum += v_iou;
    mse_sum += v_mse;
  }
  rep.miou = iou_sum / static_cast<double>(pairs.size());
  rep.mmse = mse_sum / static_cast<double>(pairs.size());
  return rep;
}

inline nlohmann::json to_json(const EvalReport& rep) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& e : rep.per_image) {
    per.push_back({{"name", e.name}, {"iou", e.iou}, {"mse", e.mse}});
  }
  return {{"n", rep.n()}, {"miou", rep.miou}, {"mmse", rep.mmse}, {"per_image", per}};
}

inline std::string format_table(const EvalReport& rep) {
  std::size_t name_w = 5;  // "image"
  for (const auto& e : rep.per_image) name_w = std::max(name_w, e.name.size());
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %8s  %8s\n", static_cast<int>(name_w), "image", "IoU",
                "Mse");
  out += line;
  for (const auto& e : rep.per_image) {
    std::snprintf(line, sizeof line, "%-*s  %8.4f  %8.4f\n", static_cast<int>(name_w),
                  e.name.c_str(), e.iou, e.mse);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-*s  %8.4f  %8.4f\n", static_cast<int>(name_w), "mean",
                rep.miou, rep.mmse);
  out += line;
  return out;
}

// ---- frame-level detection ----

inline long long smoke_pixel_count(const BinaryMask& m) {
  long long n = 0;
  for (std::uint8_t v : m.data) n += v;
  return n;
}

/// A frame counts as smoke when its smoke-pixel count strictly exceeds the
/// threshold.
inline bool detect_frame(const BinaryMask& pr, long long pixel_threshold) {
  if (pixel_threshold < 0) throw ConfigError("detect_frame: pixel_threshold must be >= 0");
  return smoke_pixel_count(pr) > pixel_threshold;
}

struct DetectionReport {
  std::optional<int> first_smoke_frame;  // 1-based
  std::vector<bool> classified;          // per frame
  std::optional<int> false_alarms;       // only when labels were supplied
};

inline DetectionReport detect_sequence(const std::vector<BinaryMask>& frames,
                                       long long pixel_threshold,
                                       const std::vector<bool>* labels = nullptr) {
  if (labels && labels->size() != frames.size()) {
    throw ConfigError("detect_sequence: label count does not match frame count");
  }
  DetectionReport rep;
  rep.classified.reserve(frames.size());
  int alarms = 0;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const bool smoke = detect_frame(frames[i], pixel_threshold);
    rep.classified.push_back(smoke);
    if (smoke && !rep.first_smoke_frame) rep.first_smoke_frame = static_cast<int>(i) + 1;
    if (smoke && labels && !(*labels)[i]) ++alarms;
  }
  if (labels) rep.false_alarms = alarms;
  return rep;
}

}  // namespace smokeseg
