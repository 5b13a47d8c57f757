#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "smokeseg/compositor.hpp"
#include "smokeseg/errors.hpp"
#include "smokeseg/net_json.hpp"
#include "smokeseg/trainer.hpp"

// The CLI's configuration file: a JSON document with optional sections
// {net, train, data, eval}. Parsing is strict end to end: an unknown key at
// any level is an error, never a silently ignored typo. The fully resolved
// config (defaults included) can be dumped back out for provenance.

namespace smokeseg {

struct DataConfig {
  double beta_min = 0.25;      // concentration drawn uniformly from [beta_min, 1]
  double gt_threshold = 0.1;   // alpha above this counts as smoke
  SmokeGenParams smoke;

  void validate() const {
    if (!(beta_min > 0.0) || beta_min > 1.0) {
      throw ConfigError("data: beta_min must be in (0,1]");
    }
    if (!(gt_threshold > 0.0) || !(gt_threshold < 1.0)) {
      throw ConfigError("data: gt_threshold must be in (0,1)");
    }
    smoke.validate();
  }
};

struct EvalConfig {
  long long pixel_threshold = 50;  // frame detector; tuned for 256x256 frames

  void validate() const {
    if (pixel_threshold < 0) throw ConfigError("eval: pixel_threshold must be >= 0");
  }
};

struct CliConfig {
  NetConfig net;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;

  void validate() const {
    net.validate();
    train.validate();
    data.validate();
    eval.validate();
  }
};

// ---- JSON (strict) ----

namespace detail {

template <typename Fn>
void parse_object(const nlohmann::json& j, const std::string& section, Fn&& assign_key) {
  if (!j.is_object()) throw ConfigError(section + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (!assign_key(key, value)) {
        throw ConfigError(section + ": unknown key \"" + key + "\"");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(section + "." + key + ": " + e.what());
    }
  }
}

}  // namespace detail

inline LossNormalization parse_loss_normalization(const std::string& s) {
  if (s == "mean_per_pixel") return LossNormalization::MeanPerPixel;
  if (s == "sum") return LossNormalization::Sum;
  throw ConfigError("loss_normalization: expected \"mean_per_pixel\" or \"sum\", got \"" + s +
                    "\"");
}

inline const char* loss_normalization_name(LossNormalization n) {
  return n == LossNormalization::MeanPerPixel ? "mean_per_pixel" : "sum";
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  detail::parse_object(j, "train", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "learning_rate") c.learning_rate = v.get<double>();
    else if (key == "momentum") c.momentum = v.get<double>();
    else if (key == "weight_decay") c.weight_decay = v.get<double>();
    else if (key == "batch_size") c.batch_size = v.get<int>();
    else if (key == "epochs") c.epochs = v.get<int>();
    else if (key == "max_steps") c.max_steps = v.get<long long>();
    else if (key == "loss_normalization")
      c.loss_normalization = parse_loss_normalization(v.get<std::string>());
    else if (key == "aux_weight_coarse") c.aux_weight_coarse = v.get<double>();
    else if (key == "aux_weight_fine") c.aux_weight_fine = v.get<double>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "checkpoint_every") c.checkpoint_every = v.get<long long>();
    else if (key == "track_miou") c.track_miou = v.get<bool>();
    else return false;
    return true;
  });
  return c;
}

inline nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"max_steps", c.max_steps},
          {"loss_normalization", loss_normalization_name(c.loss_normalization)},
          {"aux_weight_coarse", c.aux_weight_coarse},
          {"aux_weight_fine", c.aux_weight_fine},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"track_miou", c.track_miou}};
}

inline SmokeGenParams smoke_params_from_json(const nlohmann::json& j) {
  SmokeGenParams p;
  detail::parse_object(j, "data.smoke", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "octaves") p.octaves = v.get<int>();
    else if (key == "lacunarity") p.lacunarity = v.get<double>();
    else if (key == "gain") p.gain = v.get<double>();
    else if (key == "plume_cx") p.plume_cx = v.get<double>();
    else if (key == "plume_cy") p.plume_cy = v.get<double>();
    else if (key == "plume_radius") p.plume_radius = v.get<double>();
    else if (key == "base_gray") p.base_gray = v.get<double>();
    else if (key == "seed") p.seed = v.get<std::uint64_t>();
    else return false;
    return true;
  });
  return p;
}

inline nlohmann::json smoke_params_to_json(const SmokeGenParams& p) {
  return {{"octaves", p.octaves},
          {"lacunarity", p.lacunarity},
          {"gain", p.gain},
          {"plume_cx", p.plume_cx},
          {"plume_cy", p.plume_cy},
          {"plume_radius", p.plume_radius},
          {"base_gray", p.base_gray},
          {"seed", p.seed}};
}

inline DataConfig data_config_from_json(const nlohmann::json& j) {
  DataConfig c;
  detail::parse_object(j, "data", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "beta_min") c.beta_min = v.get<double>();
    else if (key == "gt_threshold") c.gt_threshold = v.get<double>();
    else if (key == "smoke") c.smoke = smoke_params_from_json(v);
    else return false;
    return true;
  });
  return c;
}

inline nlohmann::json data_config_to_json(const DataConfig& c) {
  return {{"beta_min", c.beta_min},
          {"gt_threshold", c.gt_threshold},
          {"smoke", smoke_params_to_json(c.smoke)}};
}

inline EvalConfig eval_config_from_json(const nlohmann::json& j) {
  EvalConfig c;
  detail::parse_object(j, "eval", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "pixel_threshold") c.pixel_threshold = v.get<long long>();
    else return false;
    return true;
  });
  return c;
}

inline nlohmann::json eval_config_to_json(const EvalConfig& c) {
  return {{"pixel_threshold", c.pixel_threshold}};
}

inline CliConfig cli_config_from_json(const nlohmann::json& j) {
  CliConfig c;
  detail::parse_object(j, "config", [&](const std::string& key, const nlohmann::json& v) {
    if (key == "net") c.net = net_config_from_json(v);
    else if (key == "train") c.train = train_config_from_json(v);
    else if (key == "data") c.data = data_config_from_json(v);
    else if (key == "eval") c.eval = eval_config_from_json(v);
    else return false;
    return true;
  });
  c.validate();
  return c;
}

inline nlohmann::json cli_config_to_json(const CliConfig& c) {
  return {{"net", net_config_to_json(c.net)},
          {"train", train_config_to_json(c.train)},
          {"data", data_config_to_json(c.data)},
          {"eval", eval_config_to_json(c.eval)}};
}

inline CliConfig load_cli_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  try {
    return cli_config_from_json(j);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace smokeseg
