#include <gtest/gtest.h>

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "smokeseg/config.hpp"
#include "smokeseg/errors.hpp"
#include "test_util.hpp"

namespace {

using nlohmann::json;
using smokeseg::CliConfig;
using smokeseg::ConfigError;
using smokeseg::IoError;
using smokeseg::LossNormalization;
using smokeseg::Rational;

template <typename Fn>
void expect_config_error(Fn&& fn, const std::string& needle) {
  try {
    fn();
    FAIL() << "expected ConfigError mentioning \"" << needle << "\"";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos)
        << "message was: " << e.what();
  }
}

// ---- width_scale parsing ----

TEST(WidthScale, ParsesFractionString) {
  const Rational r = smokeseg::parse_width_scale(json("1/8"));
  EXPECT_EQ(r.num, 1);
  EXPECT_EQ(r.den, 8);
}

TEST(WidthScale, ParsesWholeNumberString) {
  const Rational r = smokeseg::parse_width_scale(json("1"));
  EXPECT_EQ(r.num, 1);
  EXPECT_EQ(r.den, 1);
}

TEST(WidthScale, SnapsExactBinaryFractions) {
  const Rational eighth = smokeseg::parse_width_scale(json(0.125));
  EXPECT_EQ(eighth.num, 1);
  EXPECT_EQ(eighth.den, 8);
  const Rational half = smokeseg::parse_width_scale(json(0.5));
  EXPECT_EQ(half.num, 1);
  EXPECT_EQ(half.den, 2);
  const Rational one = smokeseg::parse_width_scale(json(1));
  EXPECT_EQ(one.num, 1);
  EXPECT_EQ(one.den, 1);
}

TEST(WidthScale, SnapsDecimalWithSmallDenominator) {
  // 0.3 is not a binary float, but 3/10 is within the snap tolerance
  const Rational r = smokeseg::parse_width_scale(json(0.3));
  EXPECT_EQ(r.num, 3);
  EXPECT_EQ(r.den, 10);
}

TEST(WidthScale, RejectsUnsnappableNumber) {
  expect_config_error([] { smokeseg::parse_width_scale(json(0.1234567)); },
                      "not a rational with denominator <= 256");
}

TEST(WidthScale, RejectsMalformedStrings) {
  expect_config_error([] { smokeseg::parse_width_scale(json("1/0")); },
                      "width_scale denominator");
  expect_config_error([] { smokeseg::parse_width_scale(json("0/4")); }, "width_scale numerator");
  expect_config_error([] { smokeseg::parse_width_scale(json("abc")); }, "positive integer");
  expect_config_error([] { smokeseg::parse_width_scale(json(true)); },
                      "expected a \"num/den\" string or a number");
}

TEST(WidthScale, ScaleAboveOneIsRejectedByNetValidation) {
  expect_config_error(
      [] { smokeseg::net_config_from_json(json{{"width_scale", "5/4"}}); },
      "rational in (0,1]");
}

TEST(WidthScale, ScaleBelowNarrowestLayerIsRejected) {
  expect_config_error([] { smokeseg::net_config_from_json(json{{"width_scale", "1/200"}}); },
                      "width_scale 1/200");
}

// ---- loss normalization ----

TEST(LossNormalizationName, RoundTripsBothModes) {
  EXPECT_EQ(smokeseg::parse_loss_normalization("mean_per_pixel"),
            LossNormalization::MeanPerPixel);
  EXPECT_EQ(smokeseg::parse_loss_normalization("sum"), LossNormalization::Sum);
  EXPECT_STREQ(smokeseg::loss_normalization_name(LossNormalization::MeanPerPixel),
               "mean_per_pixel");
  EXPECT_STREQ(smokeseg::loss_normalization_name(LossNormalization::Sum), "sum");
  expect_config_error([] { smokeseg::parse_loss_normalization("average"); },
                      "expected \"mean_per_pixel\" or \"sum\"");
}

// ---- whole-config roundtrip ----

TEST(CliConfigJson, DefaultsSurviveRoundTrip) {
  const CliConfig def;
  const CliConfig back = smokeseg::cli_config_from_json(smokeseg::cli_config_to_json(def));

  EXPECT_EQ(back.net.width_scale, def.net.width_scale);
  EXPECT_EQ(back.net.use_path2, def.net.use_path2);
  EXPECT_EQ(back.net.skips_path1, def.net.skips_path1);
  EXPECT_EQ(back.net.skips_path2, def.net.skips_path2);
  EXPECT_EQ(back.net.fusion_mode, def.net.fusion_mode);
  EXPECT_EQ(back.net.seed, def.net.seed);

  EXPECT_EQ(back.train.learning_rate, def.train.learning_rate);
  EXPECT_EQ(back.train.momentum, def.train.momentum);
  EXPECT_EQ(back.train.weight_decay, def.train.weight_decay);
  EXPECT_EQ(back.train.batch_size, def.train.batch_size);
  EXPECT_EQ(back.train.epochs, def.train.epochs);
  EXPECT_EQ(back.train.max_steps, def.train.max_steps);
  EXPECT_EQ(back.train.loss_normalization, def.train.loss_normalization);
  EXPECT_EQ(back.train.aux_weight_coarse, def.train.aux_weight_coarse);
  EXPECT_EQ(back.train.aux_weight_fine, def.train.aux_weight_fine);
  EXPECT_EQ(back.train.seed, def.train.seed);
  EXPECT_EQ(back.train.checkpoint_every, def.train.checkpoint_every);
  EXPECT_EQ(back.train.track_miou, def.train.track_miou);

  EXPECT_EQ(back.data.beta_min, def.data.beta_min);
  EXPECT_EQ(back.data.gt_threshold, def.data.gt_threshold);
  EXPECT_EQ(back.data.smoke.octaves, def.data.smoke.octaves);
  EXPECT_EQ(back.data.smoke.lacunarity, def.data.smoke.lacunarity);
  EXPECT_EQ(back.data.smoke.gain, def.data.smoke.gain);
  EXPECT_EQ(back.data.smoke.plume_cx, def.data.smoke.plume_cx);
  EXPECT_EQ(back.data.smoke.plume_cy, def.data.smoke.plume_cy);
  EXPECT_EQ(back.data.smoke.plume_radius, def.data.smoke.plume_radius);
  EXPECT_EQ(back.data.smoke.base_gray, def.data.smoke.base_gray);
  EXPECT_EQ(back.data.smoke.seed, def.data.smoke.seed);

  EXPECT_EQ(back.eval.pixel_threshold, def.eval.pixel_threshold);
}

TEST(CliConfigJson, MaxSeedSurvivesRoundTrip) {
  json j = smokeseg::cli_config_to_json(CliConfig{});
  j["net"]["seed"] = 18446744073709551615ull;
  j["train"]["seed"] = 18446744073709551615ull;
  const std::string text = j.dump();
  const CliConfig back = smokeseg::cli_config_from_json(json::parse(text));
  EXPECT_EQ(back.net.seed, 18446744073709551615ull);
  EXPECT_EQ(back.train.seed, 18446744073709551615ull);
}

TEST(CliConfigJson, PartialDocumentKeepsOtherDefaults) {
  const CliConfig c =
      smokeseg::cli_config_from_json(json::parse(R"({"train":{"batch_size":7}})"));
  EXPECT_EQ(c.train.batch_size, 7);
  EXPECT_EQ(c.train.momentum, CliConfig{}.train.momentum);
  EXPECT_EQ(c.net.width_scale, CliConfig{}.net.width_scale);
}

// ---- strict unknown-key rejection at every level ----

TEST(CliConfigJson, UnknownKeysAreRejectedAtEveryLevel) {
  expect_config_error([] { smokeseg::cli_config_from_json(json{{"nett", json::object()}}); },
                      "config: unknown key \"nett\"");
  expect_config_error(
      [] { smokeseg::cli_config_from_json(json{{"net", {{"widht_scale", "1/2"}}}}); },
      "net: unknown key \"widht_scale\"");
  expect_config_error(
      [] { smokeseg::cli_config_from_json(json{{"train", {{"lr", 0.1}}}}); },
      "train: unknown key \"lr\"");
  expect_config_error(
      [] { smokeseg::cli_config_from_json(json{{"data", {{"beta", 0.5}}}}); },
      "data: unknown key \"beta\"");
  expect_config_error(
      [] {
        smokeseg::cli_config_from_json(json{{"data", {{"smoke", {{"octave", 4}}}}}});
      },
      "data.smoke: unknown key \"octave\"");
  expect_config_error(
      [] { smokeseg::cli_config_from_json(json{{"eval", {{"threshold", 10}}}}); },
      "eval: unknown key \"threshold\"");
}

TEST(CliConfigJson, TypeErrorsNameTheOffendingKey) {
  expect_config_error(
      [] { smokeseg::cli_config_from_json(json{{"train", {{"batch_size", "two"}}}}); },
      "train.batch_size");
  expect_config_error([] { smokeseg::cli_config_from_json(json::parse("[1,2]")); },
                      "config: expected a JSON object");
}

// ---- section bounds ----

TEST(DataConfigJson, ValidatesBounds) {
  expect_config_error(
      [] { smokeseg::cli_config_from_json(json{{"data", {{"beta_min", 0.0}}}}); },
      "beta_min must be in (0,1]");
  expect_config_error(
      [] { smokeseg::cli_config_from_json(json{{"data", {{"gt_threshold", 1.0}}}}); },
      "gt_threshold must be in (0,1)");
  expect_config_error(
      [] {
        smokeseg::cli_config_from_json(json{{"data", {{"smoke", {{"octaves", 0}}}}}});
      },
      "octaves");
}

TEST(EvalConfigJson, ValidatesBounds) {
  expect_config_error(
      [] { smokeseg::cli_config_from_json(json{{"eval", {{"pixel_threshold", -1}}}}); },
      "pixel_threshold must be >= 0");
}

TEST(TrainConfigJson, RejectsConflictingSchedules) {
  expect_config_error(
      [] {
        smokeseg::cli_config_from_json(json{{"train", {{"epochs", 2}, {"max_steps", 10}}}});
      },
      "epochs or max_steps, not both");
}

// ---- file loading ----

TEST(LoadCliConfig, MissingFileIsIoError) {
  EXPECT_THROW(smokeseg::load_cli_config("/nonexistent/config.json"), IoError);
}

TEST(LoadCliConfig, InvalidJsonNamesThePath) {
  testutil::TempDir dir;
  const auto path = dir / "bad.json";
  {
    std::ofstream out(path.string());
    out << "{not json";
  }
  try {
    smokeseg::load_cli_config(path);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_EQ(msg.rfind(path.string(), 0), 0u) << msg;
    EXPECT_NE(msg.find("invalid JSON"), std::string::npos) << msg;
  }
}

TEST(LoadCliConfig, SemanticErrorsNameThePath) {
  testutil::TempDir dir;
  const auto path = dir / "typo.json";
  {
    std::ofstream out(path.string());
    out << R"({"train":{"learing_rate":0.1}})";
  }
  expect_config_error([&] { smokeseg::load_cli_config(path); },
                      path.string() + ": train: unknown key \"learing_rate\"");
}

TEST(LoadCliConfig, WellFormedFileLoads) {
  testutil::TempDir dir;
  const auto path = dir / "ok.json";
  {
    std::ofstream out(path.string());
    out << R"({"net":{"width_scale":"1/16","seed":3},"train":{"max_steps":2}})";
  }
  const CliConfig c = smokeseg::load_cli_config(path);
  EXPECT_EQ(c.net.width_scale, (Rational{1, 16}));
  EXPECT_EQ(c.net.seed, 3u);
  EXPECT_EQ(c.train.max_steps, 2);
}

}  // namespace
