#pragma once

#include <charconv>
#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "smokeseg/errors.hpp"
#include "smokeseg/net.hpp"

// JSON form of NetConfig, shared by checkpoints and the CLI config file.
// width_scale serializes as an exact "num/den" string; numeric inputs are
// accepted and snapped to the nearest rational with denominator <= 256.

namespace smokeseg {

namespace detail {

inline int parse_positive_int(const std::string& s, const char* what) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || v < 1) {
    throw ConfigError(std::string(what) + ": expected a positive integer, got \"" + s + "\"");
  }
  return v;
}

}  // namespace detail

inline Rational parse_width_scale(const nlohmann::json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    const auto slash = s.find('/');
    if (slash == std::string::npos) {
      return Rational{detail::parse_positive_int(s, "width_scale"), 1};
    }
    return Rational{detail::parse_positive_int(s.substr(0, slash), "width_scale numerator"),
                    detail::parse_positive_int(s.substr(slash + 1), "width_scale denominator")};
  }
  if (j.is_number()) {
    const double v = j.get<double>();
    for (int den = 1; den <= 256; ++den) {
      const auto num = static_cast<long long>(std::llround(v * den));
      if (num >= 1 && std::abs(static_cast<double>(num) / den - v) <= 1e-9) {
        return Rational{static_cast<int>(num), den};
      }
    }
    throw ConfigError("width_scale: " + std::to_string(v) +
                      " is not a rational with denominator <= 256; use a \"num/den\" string");
  }
  throw ConfigError("width_scale: expected a \"num/den\" string or a number");
}

inline FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "upsample_concat") return FusionMode::UpsampleConcat;
  if (s == "deconv_add") return FusionMode::DeconvAdd;
  throw ConfigError("fusion_mode: expected \"upsample_concat\" or \"deconv_add\", got \"" + s +
                    "\"");
}

inline nlohmann::json net_config_to_json(const NetConfig& c) {
  return {{"width_scale", c.width_scale.str()},
          {"use_path2", c.use_path2},
          {"skips_path1", c.skips_path1},
          {"skips_path2", c.skips_path2},
          {"fusion_mode", fusion_mode_name(c.fusion_mode)},
          {"seed", c.seed}};
}

/// Strict parse: unknown keys are rejected so a typo cannot silently fall
/// back to a default.
inline NetConfig net_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("net: expected a JSON object");
  NetConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "width_scale") c.width_scale = parse_width_scale(value);
      else if (key == "use_path2") c.use_path2 = value.get<bool>();
      else if (key == "skips_path1") c.skips_path1 = value.get<bool>();
      else if (key == "skips_path2") c.skips_path2 = value.get<bool>();
      else if (key == "fusion_mode") c.fusion_mode = parse_fusion_mode(value.get<std::string>());
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ConfigError("net: unknown key \"" + key + "\"");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("net." + key + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

}  // namespace smokeseg
