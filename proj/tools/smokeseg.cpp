// smokeseg: command-line front end for the two-path smoke segmentation
// pipeline. Subcommands cover the full loop: generate procedural smoke,
// composite datasets, train, segment, evaluate, run the frame detector, and
// finite-difference-check the gradients.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error, 3 check
// failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "smokeseg/smokeseg.hpp"

namespace fs = std::filesystem;
using namespace smokeseg;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCheckFailed = 3;

// Every subcommand prints the configuration it will act on, defaults
// included, so a run's provenance is always in its log.
void echo_config(const CliConfig& cfg) {
  std::cout << "config " << cli_config_to_json(cfg).dump() << "\n";
}

CliConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return CliConfig{};
  return load_cli_config(path);
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find('x');
  if (x == std::string::npos) throw ConfigError("--size: expected HxW, got \"" + s + "\"");
  try {
    const int h = std::stoi(s.substr(0, x));
    const int w = std::stoi(s.substr(x + 1));
    if (h < 1 || w < 1) throw ConfigError("--size: dimensions must be >= 1");
    return {h, w};
  } catch (const std::logic_error&) {
    throw ConfigError("--size: expected HxW, got \"" + s + "\"");
  }
}

// ---- gen-smoke ----

int run_gen_smoke(const CliConfig& cfg, int count, const std::string& size, std::uint64_t seed,
                  const fs::path& out_dir) {
  echo_config(cfg);
  const auto [h, w] = parse_size(size);
  if (count < 0) throw ConfigError("--count must be >= 0");
  fs::create_directories(out_dir);

  for (int i = 0; i < count; ++i) {
    SmokeGenParams p = cfg.data.smoke;
    p.seed = mix64(seed ^ static_cast<std::uint64_t>(i));
    char name[32];
    std::snprintf(name, sizeof name, "smoke_%05d.png", i);
    save_image(gen_pure_smoke(p, w, h), out_dir / name);
  }

  nlohmann::json sidecar{{"count", count},
                         {"height", h},
                         {"width", w},
                         {"seed", seed},
                         {"smoke", smoke_params_to_json(cfg.data.smoke)}};
  std::ofstream side(out_dir / "smoke_params.json", std::ios::binary);
  if (!side) throw IoError("cannot write " + (out_dir / "smoke_params.json").string());
  side << sidecar.dump(2) << "\n";
  std::cout << "wrote " << count << " smoke image(s) to " << out_dir.string() << "\n";
  return kExitOk;
}

// ---- composite ----

int run_composite(const CliConfig& cfg, const fs::path& bg_dir, const fs::path& smoke_dir,
                  int count, std::uint64_t seed, const fs::path& out_dir) {
  echo_config(cfg);
  DatasetPlan plan;
  plan.backgrounds = list_pngs(bg_dir);
  plan.smokes = list_pngs(smoke_dir);
  if (plan.backgrounds.empty()) throw ConfigError("no .png files in " + bg_dir.string());
  if (plan.smokes.empty()) throw ConfigError("no .png files in " + smoke_dir.string());
  plan.count = count;
  plan.beta_min = cfg.data.beta_min;
  plan.gt_threshold = cfg.data.gt_threshold;
  plan.seed = seed;

  const DatasetBuildResult result = build_dataset(plan, out_dir);
  for (const auto& r : result.records) {
    if (!r.usable()) std::cerr << "skipped " << r.background << " + " << r.smoke << ": " << r.skip_reason << "\n";
  }
  std::cout << "built " << result.built << " composite(s), skipped " << result.skipped << ", manifest "
            << (out_dir / "manifest.jsonl").string() << "\n";
  return kExitOk;
}

// ---- train ----

std::vector<TrainSample<float>> load_dataset(const fs::path& manifest_path) {
  const auto records = read_manifest(manifest_path);
  const fs::path base = manifest_path.parent_path();
  std::vector<TrainSample<float>> data;
  for (const auto& r : records) {
    if (!r.usable()) continue;
    const RgbImage img = load_rgb(base / r.composite);
    const BinaryMask mask = load_mask(base / r.mask);
    if (img.width != mask.width || img.height != mask.height) {
      throw ShapeError("dataset record " + r.composite + ": image " + std::to_string(img.width) +
                       "x" + std::to_string(img.height) + " vs mask " +
                       std::to_string(mask.width) + "x" + std::to_string(mask.height));
    }
    if (img.height % 16 != 0 || img.width % 16 != 0) {
      throw ShapeError("dataset record " + r.composite +
                       ": spatial dims must be multiples of 16, got " +
                       std::to_string(img.width) + "x" + std::to_string(img.height));
    }
    TrainSample<float> s;
    s.image = to_tensor<float>(img);
    s.gt = to_tensor<float>(mask);
    s.name = r.composite;
    data.push_back(std::move(s));
  }
  if (data.empty()) throw ConfigError(manifest_path.string() + ": no usable records");
  return data;
}

int run_train(CliConfig cfg, const fs::path& manifest_path, const fs::path& out_dir,
              bool seed_set, std::uint64_t seed) {
  if (seed_set) {
    cfg.net.seed = seed;
    cfg.train.seed = seed;
  }
  cfg.validate();
  echo_config(cfg);
  const auto data = load_dataset(manifest_path);
  std::cout << "dataset: " << data.size() << " sample(s), " << data[0].image.shape.w() << "x"
            << data[0].image.shape.h() << "\n";

  Network<float> net = Network<float>::build(cfg.net);
  std::cout << "network: " << net.parameter_count() << " parameters\n";
  fs::create_directories(out_dir);

  const std::function<void(long long, const Network<float>&)> on_checkpoint =
      [&](long long step, const Network<float>& snapshot) {
        char name[48];
        std::snprintf(name, sizeof name, "checkpoint-%06lld.ckpt", step);
        save_checkpoint(snapshot, out_dir / name);
        save_checkpoint(snapshot, out_dir / "model.ckpt");  // latest, stable name
      };

  const TrainHistory hist = train(net, data, cfg.train, on_checkpoint, &std::cout);
  write_history_csv(hist, out_dir / "history.csv");
  for (const auto& [epoch, m] : hist.epoch_miou) {
    std::cout << "epoch " << epoch << " train mIoU " << m << "\n";
  }
  std::cout << "done: " << hist.steps.size() << " step(s), outputs in " << out_dir.string() << "\n";
  return kExitOk;
}

// ---- segment ----

int run_segment(const CliConfig& cfg, const fs::path& ckpt, const std::vector<std::string>& inputs,
                const fs::path& out_dir, bool raw, bool maps) {
  echo_config(cfg);
  const Network<float> net = load_checkpoint(ckpt);
  fs::create_directories(out_dir);

  int failures = 0;
  for (const auto& input : inputs) {
    const fs::path in_path(input);
    try {
      const RgbImage img = load_rgb(in_path);
      if (img.height % 16 != 0 || img.width % 16 != 0) {
        throw ShapeError(in_path.string() + ": spatial dims must be multiples of 16, got " +
                         std::to_string(img.width) + "x" + std::to_string(img.height));
      }
      const PredictionBundle<float> pred = net.forward(to_tensor<float>(img));
      const std::string stem = in_path.stem().string();
      if (raw) {
        save_gray(tensor_to_gray8(pred.fused), img.width, img.height,
                  out_dir / (stem + "_raw.png"));
      } else {
        save_image(binarize(pred.fused), out_dir / (stem + ".png"));
      }
      if (maps) {
        save_gray(tensor_to_gray8(pred.coarse), img.width, img.height,
                  out_dir / (stem + "_coarse.png"));
        if (pred.fine) {
          save_gray(tensor_to_gray8(*pred.fine), img.width, img.height,
                    out_dir / (stem + "_fine.png"));
        }
      }
    } catch (const Error& e) {
      std::cerr << "error: " << e.what() << "\n";
      ++failures;
    }
  }
  std::cout << "segmented " << (inputs.size() - failures) << "/" << inputs.size()
            << " image(s) into " << out_dir.string() << "\n";
  return failures == 0 ? kExitOk : kExitRuntime;
}

// ---- eval ----

int run_eval(const CliConfig& cfg, const fs::path& pred_dir, const fs::path& gt_dir,
             const fs::path& report_path) {
  echo_config(cfg);
  const auto preds = list_pngs(pred_dir);
  const auto gts = list_pngs(gt_dir);

  std::vector<std::string> unmatched;
  std::vector<MaskPair> pairs;
  std::vector<std::string> names;
  for (const auto& p : preds) {
    const fs::path match = gt_dir / p.filename();
    if (fs::exists(match)) {
      pairs.emplace_back(load_mask(p), load_mask(match));
      names.push_back(p.filename().string());
    } else {
      unmatched.push_back("prediction without ground truth: " + p.filename().string());
    }
  }
  for (const auto& g : gts) {
    if (!fs::exists(pred_dir / g.filename())) {
      unmatched.push_back("ground truth without prediction: " + g.filename().string());
    }
  }
  if (!unmatched.empty()) {
    for (const auto& u : unmatched) std::cerr << u << "\n";
    throw ConfigError("eval: " + std::to_string(unmatched.size()) + " unmatched file(s)");
  }
  if (pairs.empty()) throw ConfigError("eval: no mask pairs found");

  const EvalReport report = evaluate(pairs, names);
  std::cout << format_table(report);
  if (!report_path.empty()) {
    if (report_path.has_parent_path()) fs::create_directories(report_path.parent_path());
    std::ofstream out(report_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + report_path.string());
    out << to_json(report).dump(2) << "\n";
    std::cout << "report written to " << report_path.string() << "\n";
  }
  return kExitOk;
}

// ---- detect ----

std::vector<bool> load_labels(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<bool> labels;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "0") labels.push_back(false);
    else if (line == "1") labels.push_back(true);
    else throw ConfigError(path.string() + ": labels must be one 0 or 1 per line, got \"" + line + "\"");
  }
  return labels;
}

int run_detect(CliConfig cfg, const fs::path& ckpt, const fs::path& frames_dir,
               bool threshold_set, long long pixel_threshold, const std::string& labels_path) {
  if (threshold_set) cfg.eval.pixel_threshold = pixel_threshold;
  cfg.validate();
  echo_config(cfg);

  const auto frame_paths = list_pngs(frames_dir);
  if (frame_paths.empty()) throw ConfigError("no .png frames in " + frames_dir.string());
  const Network<float> net = load_checkpoint(ckpt);

  std::vector<BinaryMask> masks;
  masks.reserve(frame_paths.size());
  for (const auto& p : frame_paths) {
    const RgbImage img = load_rgb(p);
    if (img.height % 16 != 0 || img.width % 16 != 0) {
      throw ShapeError(p.string() + ": spatial dims must be multiples of 16, got " +
                       std::to_string(img.width) + "x" + std::to_string(img.height));
    }
    masks.push_back(binarize(net.forward(to_tensor<float>(img)).fused));
  }

  DetectionReport report;
  if (labels_path.empty()) {
    report = detect_sequence(masks, cfg.eval.pixel_threshold);
  } else {
    const std::vector<bool> labels = load_labels(labels_path);
    report = detect_sequence(masks, cfg.eval.pixel_threshold, &labels);
  }

  for (std::size_t i = 0; i < masks.size(); ++i) {
    std::cout << "frame " << (i + 1) << " " << frame_paths[i].filename().string() << " "
              << (report.classified[i] ? "smoke" : "non-smoke") << " ("
              << smoke_pixel_count(masks[i]) << " px)\n";
  }
  if (report.first_smoke_frame) {
    std::cout << "smoke detected at frame " << *report.first_smoke_frame << "\n";
  } else {
    std::cout << "no smoke detected\n";
  }
  if (report.false_alarms) std::cout << "false alarms: " << *report.false_alarms << "\n";
  return kExitOk;
}

// ---- gradcheck ----

int run_gradcheck(bool full, bool mutate_adjoint, std::uint64_t seed) {
  if (mutate_adjoint) {
    // deliberate fault injection: a healthy checker must fail this run
    smokeseg::detail::corrupt_sigmoid_adjoint.store(true);
  }

  bool ok = true;
  std::printf("%-22s %8s  %s\n", "op", "checked", "max rel err");
  for (const OpCheckResult& r : run_op_checks(seed)) {
    std::printf("%-22s %8d  %.3e%s\n", r.op.c_str(), r.checked, r.max_rel_err,
                r.pass() ? "" : "  FAIL");
    ok = ok && r.pass();
  }

  if (full) {
    NetConfig cfg;
    cfg.width_scale = {1, 16};
    cfg.seed = seed;
    Network<double> net = Network<double>::build(cfg);
    std::mt19937_64 rng(mix64(seed ^ 0x9e3779b97f4a7c15ULL));
    randomize_biases(net, rng);
    Tensor<double> input(Shape(1, 3, 16, 16));
    for (auto& v : input.data) v = uniform01(rng);
    const GradCheckReport rep = check_network_gradients(net, input, 12, seed);
    std::printf("%-22s %8d  %.3e%s\n", "network(1/16)", rep.checked, rep.max_rel_err,
                rep.pass() ? "" : "  FAIL");
    std::printf("  probes: %d compared, %d skipped at kinks, %d below fd resolution\n",
                rep.checked, rep.skipped_nonsmooth, rep.skipped_below_floor);
    if (!rep.pass()) std::printf("  worst: %s\n", rep.worst.c_str());
    ok = ok && rep.pass();
  }

  if (mutate_adjoint) {
    smokeseg::detail::corrupt_sigmoid_adjoint.store(false);
    std::printf("mutated adjoint %s\n", ok ? "NOT DETECTED" : "detected");
  }
  std::printf("gradcheck %s\n", ok ? "passed" : "FAILED");
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-path smoke segmentation pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (sections: net, train, data, eval)")
      ->check(CLI::ExistingFile);

  // gen-smoke
  auto* gen = app.add_subcommand("gen-smoke", "generate procedural RGBA smoke images");
  int gen_count = 10;
  std::string gen_size = "256x256";
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--count", gen_count, "number of images")->required();
  gen->add_option("--size", gen_size, "image size as HxW (default 256x256)");
  gen->add_option("--seed", gen_seed, "base seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  // composite
  auto* comp = app.add_subcommand("composite", "blend smoke over backgrounds into a dataset");
  std::string comp_bg, comp_smoke, comp_out;
  int comp_count = 0;
  std::uint64_t comp_seed = 0;
  comp->add_option("--backgrounds", comp_bg, "directory of background .png files")->required();
  comp->add_option("--smokes", comp_smoke, "directory of RGBA smoke .png files")->required();
  comp->add_option("--count", comp_count, "number of composites")->required();
  comp->add_option("--seed", comp_seed, "base seed");
  comp->add_option("--out", comp_out, "output directory")->required();

  // train
  auto* tr = app.add_subcommand("train", "train a network on a composited dataset");
  std::string tr_data, tr_out;
  std::uint64_t tr_seed = 0;
  tr->add_option("--data", tr_data, "dataset manifest.jsonl")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", tr_out, "output directory for checkpoints and history")->required();
  auto* tr_seed_opt = tr->add_option("--seed", tr_seed, "override net and train seeds");

  // segment
  auto* seg = app.add_subcommand("segment", "run a checkpoint over images");
  std::string seg_ckpt, seg_out;
  std::vector<std::string> seg_inputs;
  bool seg_raw = false, seg_maps = false;
  seg->add_option("--checkpoint", seg_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  seg->add_option("--input", seg_inputs, "input image(s)")->required()->expected(-1);
  seg->add_option("--out", seg_out, "output directory")->required();
  seg->add_flag("--raw", seg_raw, "write 8-bit probability maps instead of binary masks");
  seg->add_flag("--maps", seg_maps, "also write the per-path coarse/fine maps");

  // eval
  auto* ev = app.add_subcommand("eval", "score predictions against ground-truth masks");
  std::string ev_pred, ev_gt, ev_out;
  ev->add_option("--pred", ev_pred, "directory of predicted masks")->required();
  ev->add_option("--gt", ev_gt, "directory of ground-truth masks")->required();
  ev->add_option("--out", ev_out, "report JSON path");

  // detect
  auto* det = app.add_subcommand("detect", "frame-level smoke detection over a frame directory");
  std::string det_ckpt, det_frames, det_labels;
  long long det_threshold = 0;
  det->add_option("--checkpoint", det_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  det->add_option("--frames", det_frames, "directory of frames (lexicographic order)")->required();
  auto* det_thr_opt =
      det->add_option("--pixel-threshold", det_threshold, "smoke-pixel count threshold");
  det->add_option("--labels", det_labels, "per-frame 0/1 labels, one per line")
      ->check(CLI::ExistingFile);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  bool gc_full = false, gc_mutate = false;
  std::uint64_t gc_seed = 20240817;
  gc->add_flag("--full", gc_full, "also check the whole width-1/16 network");
  gc->add_flag("--mutate-adjoint", gc_mutate,
               "corrupt one adjoint on purpose; a healthy checker then fails (exit 3)");
  gc->add_option("--seed", gc_seed, "seed for probe tensors");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    const CliConfig cfg = load_config_or_default(config_path);
    if (*gen) return run_gen_smoke(cfg, gen_count, gen_size, gen_seed, gen_out);
    if (*comp) return run_composite(cfg, comp_bg, comp_smoke, comp_count, comp_seed, comp_out);
    if (*tr) return run_train(cfg, tr_data, tr_out, tr_seed_opt->count() > 0, tr_seed);
    if (*seg) return run_segment(cfg, seg_ckpt, seg_inputs, seg_out, seg_raw, seg_maps);
    if (*ev) return run_eval(cfg, ev_pred, ev_gt, ev_out);
    if (*det)
      return run_detect(cfg, det_ckpt, det_frames, det_thr_opt->count() > 0, det_threshold,
                        det_labels);
    if (*gc) return run_gradcheck(gc_full, gc_mutate, gc_seed);
    std::cerr << "error: no subcommand\n";
    return kExitValidation;
  } catch (const ConfigError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
