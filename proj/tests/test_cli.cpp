#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smokeseg/compositor.hpp"
#include "smokeseg/gradcheck.hpp"
#include "smokeseg/manifest.hpp"
#include "smokeseg/png_io.hpp"
#include "test_util.hpp"

// Black-box tests: every check here drives the installed binary through a
// shell the way a user would, and looks only at exit codes, stdout/stderr
// text and the files left behind.

namespace {

namespace fs = std::filesystem;
using testutil::CliResult;
using testutil::run_cli;

void expect_contains(const CliResult& r, const std::string& needle) {
  EXPECT_NE(r.output.find(needle), std::string::npos)
      << "expected \"" << needle << "\" in:\n" << r.output;
}

std::string q(const fs::path& p) { return p.string(); }

TEST(CliBasics, HelpExitsZero) {
  const CliResult r = run_cli("--help");
  EXPECT_EQ(r.exit_code, 0);
  expect_contains(r, "smoke segmentation");
  for (const char* sub : {"gen-smoke", "composite", "train", "segment", "eval", "detect",
                          "gradcheck"}) {
    expect_contains(r, sub);
  }
}

TEST(CliBasics, MissingSubcommandIsValidationError) {
  EXPECT_EQ(run_cli("").exit_code, 1);
  EXPECT_EQ(run_cli("frobnicate").exit_code, 1);
}

TEST(CliBasics, BadConfigFileIsValidationError) {
  testutil::TempDir dir;
  {
    std::ofstream out((dir / "broken.json").string());
    out << "{not json";
  }
  const CliResult r = run_cli("--config " + q(dir / "broken.json") + " gradcheck");
  EXPECT_EQ(r.exit_code, 1);
  expect_contains(r, "invalid JSON");
}

TEST(CliGradcheck, PassesAndListsEveryOp) {
  const CliResult r = run_cli("gradcheck --seed 7");
  EXPECT_EQ(r.exit_code, 0);
  expect_contains(r, "gradcheck passed");
  for (const auto& op : smokeseg::op_check_names()) expect_contains(r, op);
}

TEST(CliGradcheck, PlantedFaultIsDetected) {
  const CliResult r = run_cli("gradcheck --mutate-adjoint");
  EXPECT_EQ(r.exit_code, 3);
  expect_contains(r, "mutated adjoint detected");
  expect_contains(r, "gradcheck FAILED");
}

TEST(CliGenSmoke, IsDeterministicAndWritesSidecar) {
  testutil::TempDir dir;
  const CliResult a = run_cli("gen-smoke --count 3 --size 32x32 --seed 11 --out " + q(dir / "a"));
  const CliResult b = run_cli("gen-smoke --count 3 --size 32x32 --seed 11 --out " + q(dir / "b"));
  ASSERT_EQ(a.exit_code, 0) << a.output;
  ASSERT_EQ(b.exit_code, 0) << b.output;
  expect_contains(a, "wrote 3 smoke image(s)");
  for (int i = 0; i < 3; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "smoke_%05d.png", i);
    const auto pa = smokeseg::png::read_file(dir / "a" / name);
    const auto pb = smokeseg::png::read_file(dir / "b" / name);
    EXPECT_EQ(pa, pb) << name;
  }
  EXPECT_TRUE(fs::exists(dir / "a" / "smoke_params.json"));

  const CliResult c = run_cli("gen-smoke --count 3 --size 32x32 --seed 12 --out " + q(dir / "c"));
  ASSERT_EQ(c.exit_code, 0);
  EXPECT_NE(smokeseg::png::read_file(dir / "a" / "smoke_00000.png"),
            smokeseg::png::read_file(dir / "c" / "smoke_00000.png"));
}

TEST(CliGenSmoke, RejectsMalformedSize) {
  testutil::TempDir dir;
  const CliResult r = run_cli("gen-smoke --count 1 --size 64 --out " + q(dir / "x"));
  EXPECT_EQ(r.exit_code, 1);
  expect_contains(r, "expected HxW");
}

// One linear scenario through the whole pipeline; later stages consume the
// files earlier stages produced.
TEST(CliPipeline, CompositeTrainSegmentEvalDetect) {
  testutil::TempDir dir;
  const fs::path bg_dir = dir / "backgrounds";
  const fs::path smoke_dir = dir / "smokes";
  const fs::path data_dir = dir / "dataset";
  const fs::path train_dir = dir / "run";

  fs::create_directories(bg_dir);
  smokeseg::save_image(testutil::make_background(32, 32, 1), bg_dir / "bg_a.png");
  smokeseg::save_image(testutil::make_background(32, 32, 2), bg_dir / "bg_b.png");

  // smokes straight from the CLI generator
  ASSERT_EQ(run_cli("gen-smoke --count 2 --size 32x32 --seed 40 --out " + q(smoke_dir)).exit_code,
            0);

  // ---- composite ----
  const CliResult comp = run_cli("composite --backgrounds " + q(bg_dir) + " --smokes " +
                                 q(smoke_dir) + " --count 4 --seed 5 --out " + q(data_dir));
  ASSERT_EQ(comp.exit_code, 0) << comp.output;
  expect_contains(comp, "built 4 composite(s), skipped 0");
  ASSERT_TRUE(fs::exists(data_dir / "manifest.jsonl"));
  const auto records = smokeseg::read_manifest(data_dir / "manifest.jsonl");
  ASSERT_EQ(records.size(), 4u);
  for (const auto& r : records) {
    EXPECT_TRUE(r.usable());
    EXPECT_TRUE(fs::exists(data_dir / r.composite)) << r.composite;
    EXPECT_TRUE(fs::exists(data_dir / r.mask)) << r.mask;
  }

  // ---- train ----
  const fs::path config_path = dir / "config.json";
  {
    std::ofstream out(config_path.string());
    out << R"({"net":{"width_scale":"1/16"},)"
        << R"("train":{"max_steps":2,"batch_size":2,"learning_rate":0.01}})";
  }
  const CliResult tr = run_cli("--config " + q(config_path) + " train --data " +
                               q(data_dir / "manifest.jsonl") + " --out " + q(train_dir));
  ASSERT_EQ(tr.exit_code, 0) << tr.output;
  EXPECT_EQ(tr.output.rfind("config {", 0), 0u) << tr.output;
  expect_contains(tr, "dataset: 4 sample(s), 32x32");
  expect_contains(tr, "network: ");
  expect_contains(tr, "step      1");
  expect_contains(tr, "done: 2 step(s)");
  EXPECT_TRUE(fs::exists(train_dir / "checkpoint-000002.ckpt"));
  EXPECT_TRUE(fs::exists(train_dir / "model.ckpt"));
  EXPECT_TRUE(fs::exists(train_dir / "history.csv"));
  {
    std::ifstream csv((train_dir / "history.csv").string());
    std::string header;
    std::getline(csv, header);
    EXPECT_EQ(header, "step,data_loss,full_loss,seconds");
  }

  // --seed overrides both the net and the shuffle seed in the echoed config
  const CliResult tr2 = run_cli("--config " + q(config_path) + " train --data " +
                                q(data_dir / "manifest.jsonl") + " --out " + q(dir / "run2") +
                                " --seed 123");
  ASSERT_EQ(tr2.exit_code, 0) << tr2.output;
  {
    const auto eol = tr2.output.find('\n');
    const auto echoed = nlohmann::json::parse(tr2.output.substr(7, eol - 7));
    EXPECT_EQ(echoed["net"]["seed"].get<std::uint64_t>(), 123u);
    EXPECT_EQ(echoed["train"]["seed"].get<std::uint64_t>(), 123u);
  }

  // ---- segment ----
  const fs::path model = train_dir / "model.ckpt";
  const fs::path seg_dir = dir / "seg";
  const fs::path first_composite = data_dir / records[0].composite;
  const CliResult seg = run_cli("segment --checkpoint " + q(model) + " --input " +
                                q(first_composite) + " --out " + q(seg_dir));
  ASSERT_EQ(seg.exit_code, 0) << seg.output;
  expect_contains(seg, "segmented 1/1");
  const std::string stem = first_composite.stem().string();
  ASSERT_TRUE(fs::exists(seg_dir / (stem + ".png")));
  const auto mask = smokeseg::load_mask(seg_dir / (stem + ".png"));
  EXPECT_EQ(mask.width, 32);
  EXPECT_EQ(mask.height, 32);

  const fs::path maps_dir = dir / "seg_maps";
  const CliResult seg2 = run_cli("segment --checkpoint " + q(model) + " --input " +
                                 q(first_composite) + " --out " + q(maps_dir) + " --raw --maps");
  ASSERT_EQ(seg2.exit_code, 0) << seg2.output;
  EXPECT_TRUE(fs::exists(maps_dir / (stem + "_raw.png")));
  EXPECT_TRUE(fs::exists(maps_dir / (stem + "_coarse.png")));
  EXPECT_TRUE(fs::exists(maps_dir / (stem + "_fine.png")));
  EXPECT_FALSE(fs::exists(maps_dir / (stem + ".png")));

  // ---- eval ----
  // scoring the dataset masks against themselves must come out perfect
  const CliResult ev = run_cli("eval --pred " + q(data_dir / "masks") + " --gt " +
                               q(data_dir / "masks") + " --out " + q(dir / "report.json"));
  ASSERT_EQ(ev.exit_code, 0) << ev.output;
  expect_contains(ev, "IoU");
  expect_contains(ev, "Mse");
  expect_contains(ev, "mean");
  expect_contains(ev, "1.0000");
  expect_contains(ev, "0.0000");
  ASSERT_TRUE(fs::exists(dir / "report.json"));
  {
    std::ifstream in((dir / "report.json").string());
    nlohmann::json j;
    in >> j;
    EXPECT_EQ(j["n"].get<int>(), 4);
    EXPECT_DOUBLE_EQ(j["miou"].get<double>(), 1.0);
  }

  const CliResult ev_bad = run_cli("eval --pred " + q(data_dir / "masks") + " --gt " + q(bg_dir));
  EXPECT_EQ(ev_bad.exit_code, 1);
  expect_contains(ev_bad, "unmatched");

  // ---- detect ----
  const fs::path frames = data_dir / "composites";
  const CliResult det = run_cli("detect --checkpoint " + q(model) + " --frames " + q(frames));
  ASSERT_EQ(det.exit_code, 0) << det.output;
  expect_contains(det, "frame 1 ");
  expect_contains(det, " px)");
  const bool announced = det.output.find("smoke detected at frame") != std::string::npos ||
                         det.output.find("no smoke detected") != std::string::npos;
  EXPECT_TRUE(announced) << det.output;
  EXPECT_EQ(det.output.find("false alarms"), std::string::npos) << det.output;

  const fs::path labels = dir / "labels.txt";
  {
    std::ofstream out(labels.string());
    out << "0\n0\n0\n0\n";
  }
  const CliResult det2 = run_cli("detect --checkpoint " + q(model) + " --frames " + q(frames) +
                                 " --labels " + q(labels));
  ASSERT_EQ(det2.exit_code, 0) << det2.output;
  expect_contains(det2, "false alarms: ");

  const CliResult det_bad = run_cli("detect --checkpoint " + q(model) + " --frames " + q(frames) +
                                    " --pixel-threshold -5");
  EXPECT_EQ(det_bad.exit_code, 1);
  expect_contains(det_bad, "pixel_threshold");

  // ---- runtime error exit code ----
  const fs::path garbage = dir / "garbage.ckpt";
  {
    std::ofstream out(garbage.string());
    out << "not a checkpoint";
  }
  const CliResult seg_bad = run_cli("segment --checkpoint " + q(garbage) + " --input " +
                                    q(first_composite) + " --out " + q(dir / "seg_bad"));
  EXPECT_EQ(seg_bad.exit_code, 2);
  expect_contains(seg_bad, "bad magic");

  // a 20x20 input reaches the per-image handler and flips the exit code
  const fs::path odd = dir / "odd.png";
  smokeseg::save_image(testutil::make_background(20, 20, 9), odd);
  const CliResult seg_odd = run_cli("segment --checkpoint " + q(model) + " --input " + q(odd) +
                                    " --out " + q(dir / "seg_odd"));
  EXPECT_EQ(seg_odd.exit_code, 2);
  expect_contains(seg_odd, "multiples of 16");
  expect_contains(seg_odd, "segmented 0/1");
}

TEST(CliComposite, EmptyInputDirectoryIsValidationError) {
  testutil::TempDir dir;
  fs::create_directories(dir / "empty_bg");
  fs::create_directories(dir / "empty_smoke");
  const CliResult r = run_cli("composite --backgrounds " + q(dir / "empty_bg") + " --smokes " +
                              q(dir / "empty_smoke") + " --count 1 --out " + q(dir / "out"));
  EXPECT_EQ(r.exit_code, 1);
  expect_contains(r, "no .png files");
}

TEST(CliTrain, MissingManifestFailsOptionValidation) {
  testutil::TempDir dir;
  const CliResult r =
      run_cli("train --data " + q(dir / "missing.jsonl") + " --out " + q(dir / "out"));
  EXPECT_EQ(r.exit_code, 1);
}

}  // namespace
