#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "smokeseg/errors.hpp"
#include "smokeseg/image.hpp"
#include "smokeseg/manifest.hpp"
#include "smokeseg/png_io.hpp"
#include "smokeseg/rng.hpp"

// Synthetic training data: procedural translucent smoke blended over
// arbitrary backgrounds, I_c = (1 - a*beta)*B_c + a*beta*S_c per channel,
// with the ground truth taken from the smoke's own alpha channel. The mask
// depends only on alpha, so one smoke image yields the same ground truth over
// every background and every beta.

namespace smokeseg {

struct SmokeGenParams {
  int octaves = 5;
  double lacunarity = 2.0;
  double gain = 0.5;
  double plume_cx = 0.5;   // normalized plume center
  double plume_cy = 0.6;
  double plume_radius = 0.45;
  double base_gray = 0.85;
  std::uint64_t seed = 0;

  void validate() const {
    if (octaves < 1) throw ConfigError("smoke: octaves must be >= 1");
    if (!(plume_radius > 0.0)) throw ConfigError("smoke: plume_radius must be > 0");
    for (double v : {lacunarity, gain, plume_cx, plume_cy, plume_radius, base_gray}) {
      if (!std::isfinite(v)) throw ConfigError("smoke: parameters must be finite");
    }
    if (base_gray < 0.0 || base_gray > 1.0) throw ConfigError("smoke: base_gray must be in [0,1]");
  }
};

namespace detail {

// value noise: hashed lattice corners, smoothstep-interpolated
inline double lattice_value(std::uint64_t seed, int octave, int xi, int yi) {
  std::uint64_t h = seed;
  h = hash_combine(h, static_cast<std::uint64_t>(octave) + 1);
  h = hash_combine(h, static_cast<std::uint64_t>(static_cast<std::uint32_t>(xi)));
  h = hash_combine(h, static_cast<std::uint64_t>(static_cast<std::uint32_t>(yi)));
  return to_unit(h);
}

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

inline double value_noise(std::uint64_t seed, int octave, double x, double y) {
  const int xi = static_cast<int>(std::floor(x));
  const int yi = static_cast<int>(std::floor(y));
  const double fx = smoothstep(x - xi);
  const double fy = smoothstep(y - yi);
  const double v00 = lattice_value(seed, octave, xi, yi);
  const double v10 = lattice_value(seed, octave, xi + 1, yi);
  const double v01 = lattice_value(seed, octave, xi, yi + 1);
  const double v11 = lattice_value(seed, octave, xi + 1, yi + 1);
  const double top = v00 + (v10 - v00) * fx;
  const double bot = v01 + (v11 - v01) * fx;
  return top + (bot - top) * fy;
}

inline double fractal_noise(const SmokeGenParams& p, double u, double v) {
  double sum = 0.0, amp = 1.0, norm = 0.0, freq = 4.0;
  for (int o = 0; o < p.octaves; ++o) {
    sum += amp * value_noise(p.seed, o, u * freq, v * freq);
    norm += amp;
    amp *= p.gain;
    freq *= p.lacunarity;
  }
  return sum / norm;  // amplitude-normalized to [0,1]
}

}  // namespace detail

/// Deterministic procedural smoke: fractal value noise shaped by a radial
/// plume falloff. Same params and seed give bitwise-identical images.
inline RgbaImage gen_pure_smoke(const SmokeGenParams& params, int width, int height) {
  params.validate();
  RgbaImage img(width, height);
  for (int y = 0; y < height; ++y) {
    const double v = (y + 0.5) / height;
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width;
      const double noise = detail::fractal_noise(params, u, v);
      const double dx = (u - params.plume_cx) / params.plume_radius;
      const double dy = (v - params.plume_cy) / params.plume_radius;
      const double d2 = dx * dx + dy * dy;
      const double falloff = d2 >= 1.0 ? 0.0 : (1.0 - d2) * (1.0 - d2);
      const double alpha = noise * falloff;
      const double gray = params.base_gray * (0.5 + 0.5 * noise);
      const std::uint8_t g8 = detail::quantize8(255.0 * gray);
      img.at(x, y, 0) = g8;
      img.at(x, y, 1) = g8;
      img.at(x, y, 2) = g8;
      img.at(x, y, 3) = detail::quantize8(255.0 * alpha);
    }
  }
  return img;
}

/// Alpha blend with concentration coefficient beta in (0,1]. Arithmetic runs
/// in double on the 8-bit values (blending is linear, so this equals working
/// on [0,1] and rescaling); quantization happens exactly once, round half up.
inline RgbImage composite(const RgbImage& bg, const RgbaImage& smoke, double beta) {
  if (bg.width != smoke.width || bg.height != smoke.height) {
    throw ShapeError("composite: background " + std::to_string(bg.width) + "x" +
                     std::to_string(bg.height) + " vs smoke " + std::to_string(smoke.width) + "x" +
                     std::to_string(smoke.height));
  }
  if (!(beta > 0.0) || beta > 1.0) {
    throw ConfigError("composite: beta must be in (0,1], got " + std::to_string(beta));
  }
  RgbImage out(bg.width, bg.height);
  for (int y = 0; y < bg.height; ++y) {
    for (int x = 0; x < bg.width; ++x) {
      const double ab = smoke.at(x, y, 3) / 255.0 * beta;
      for (int c = 0; c < 3; ++c) {
        out.at(x, y, c) = detail::quantize8((1.0 - ab) * bg.at(x, y, c) + ab * smoke.at(x, y, c));
      }
    }
  }
  return out;
}

/// Binary ground truth: smoke wherever alpha strictly exceeds the threshold.
inline BinaryMask ground_truth(const RgbaImage& smoke, double gt_threshold) {
  if (!(gt_threshold > 0.0) || !(gt_threshold < 1.0)) {
    throw ConfigError("ground_truth: threshold must be in (0,1), got " +
                      std::to_string(gt_threshold));
  }
  BinaryMask mask(smoke.width, smoke.height);
  for (int y = 0; y < smoke.height; ++y) {
    for (int x = 0; x < smoke.width; ++x) {
      mask.at(x, y) = smoke.at(x, y, 3) / 255.0 > gt_threshold ? 1 : 0;
    }
  }
  return mask;
}

// ---- dataset builder ----

struct DatasetPlan {
  std::vector<std::filesystem::path> backgrounds;
  std::vector<std::filesystem::path> smokes;
  int count = 0;
  double beta_min = 0.25;  // drawn uniformly from [beta_min, 1]
  double gt_threshold = 0.1;
  std::uint64_t seed = 0;
};

struct DatasetBuildResult {
  std::vector<CompositeRecord> records;
  int built = 0;
  int skipped = 0;
};

namespace detail {

// manifest paths are relative to the manifest's directory when the
// filesystem allows it (same root), else kept verbatim
inline std::string relative_to(const std::filesystem::path& target,
                               const std::filesystem::path& base) {
  std::error_code ec;
  const auto rel =
      std::filesystem::relative(std::filesystem::absolute(target, ec).lexically_normal(),
                                std::filesystem::absolute(base, ec).lexically_normal(), ec);
  if (ec || rel.empty()) return target.string();
  return rel.generic_string();
}

}  // namespace detail

/// Draws (background, smoke, beta) per record, composites, and writes
/// composites/, masks/ and manifest.jsonl under out_dir. Unreadable inputs
/// skip that record; the manifest carries the reason.
inline DatasetBuildResult build_dataset(const DatasetPlan& plan,
                                        const std::filesystem::path& out_dir) {
  if (plan.backgrounds.empty()) throw ConfigError("build_dataset: no background images");
  if (plan.smokes.empty()) throw ConfigError("build_dataset: no smoke images");
  if (plan.count < 0) throw ConfigError("build_dataset: count must be >= 0");
  if (!(plan.beta_min > 0.0) || plan.beta_min > 1.0) {
    throw ConfigError("build_dataset: beta_min must be in (0,1]");
  }

  std::filesystem::create_directories(out_dir / "composites");
  std::filesystem::create_directories(out_dir / "masks");

  DatasetBuildResult result;
  for (int i = 0; i < plan.count; ++i) {
    // per-record stream: global seed xor record index, whitened
    std::mt19937_64 rng(mix64(plan.seed ^ static_cast<std::uint64_t>(i)));
    CompositeRecord rec;
    rec.seed = plan.seed ^ static_cast<std::uint64_t>(i);
    rec.gt_threshold = plan.gt_threshold;
    const auto& bg_path = plan.backgrounds[rng() % plan.backgrounds.size()];
    const auto& smoke_path = plan.smokes[rng() % plan.smokes.size()];
    rec.background = detail::relative_to(bg_path, out_dir);
    rec.smoke = detail::relative_to(smoke_path, out_dir);
    rec.beta = plan.beta_min + (1.0 - plan.beta_min) * uniform01(rng);

    char stem[32];
    std::snprintf(stem, sizeof stem, "img_%05d.png", i);
    try {
      const RgbaImage smoke = load_rgba(smoke_path);
      const RgbImage bg = fit_to(load_rgb(bg_path), smoke.width, smoke.height);
      const RgbImage comp = composite(bg, smoke, rec.beta);
      const BinaryMask mask = ground_truth(smoke, rec.gt_threshold);
      save_image(comp, out_dir / "composites" / stem);
      save_image(mask, out_dir / "masks" / stem);
      rec.composite = std::string("composites/") + stem;
      rec.mask = std::string("masks/") + stem;
      ++result.built;
    } catch (const IoError& e) {
      rec.skip_reason = e.what();
      ++result.skipped;
    }
    result.records.push_back(std::move(rec));
  }
  write_manifest(result.records, out_dir / "manifest.jsonl");
  return result;
}

}  // namespace smokeseg
