#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "smokeseg/errors.hpp"
#include "smokeseg/image.hpp"
#include "smokeseg/metrics.hpp"
#include "smokeseg/net.hpp"

// Binary cross-entropy training with SGD-momentum. Weight decay is coupled
// L2 applied inside the optimizer (grad + 2*lambda*w for weights only),
// identical to differentiating a lambda*||W||^2 loss term; the logged full
// loss reports that term for monitoring.

namespace smokeseg {

enum class LossNormalization { Sum, MeanPerPixel };

struct TrainConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 1e-5;
  int batch_size = 4;
  int epochs = 0;         // exactly one of epochs/max_steps may be > 0
  long long max_steps = 0;
  LossNormalization loss_normalization = LossNormalization::MeanPerPixel;
  double aux_weight_coarse = 0.0;  // optional supervision on the per-path maps
  double aux_weight_fine = 0.0;
  std::uint64_t seed = 0;
  long long checkpoint_every = 0;  // 0: final checkpoint only
  bool track_miou = false;

  void validate() const {
    // learning_rate 0 is allowed as a no-op probe (one step leaves params
    // untouched but still logs the loss)
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw ConfigError("train: learning_rate must be finite and >= 0");
    }
    if (!(momentum >= 0.0) || momentum >= 1.0) {
      throw ConfigError("train: momentum must be in [0,1)");
    }
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (epochs < 0 || max_steps < 0) throw ConfigError("train: epochs/max_steps must be >= 0");
    if (epochs > 0 && max_steps > 0) {
      throw ConfigError("train: set epochs or max_steps, not both");
    }
    if (aux_weight_coarse < 0.0 || aux_weight_fine < 0.0) {
      throw ConfigError("train: auxiliary loss weights must be >= 0");
    }
    if (checkpoint_every < 0) throw ConfigError("train: checkpoint_every must be >= 0");
  }
};

// ---- loss ----

/// Cross-entropy data term and its gradient w.r.t. the prediction map.
/// Accumulates in double regardless of F.
template <typename F>
inline std::pair<double, Tensor<F>> bce_data_loss(const Tensor<F>& pred, const Tensor<F>& gt,
                                                  LossNormalization norm) {
  if (pred.shape != gt.shape) {
    throw ShapeError("bce: prediction " + pred.shape.str() + " vs ground truth " + gt.shape.str());
  }
  const double scale =
      norm == LossNormalization::MeanPerPixel ? 1.0 / static_cast<double>(pred.numel()) : 1.0;
  double loss = 0.0;
  Tensor<F> grad(pred.shape);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double g = static_cast<double>(gt.data[i]);
    if (g != 0.0 && g != 1.0) throw Error("bce: ground truth must be strictly binary");
    const double p = static_cast<double>(pred.data[i]);
    if (!(p > 0.0 && p < 1.0)) throw Error("bce: prediction outside (0,1); clamp upstream");
    loss -= g * std::log(p) + (1.0 - g) * std::log1p(-p);
    grad.data[i] = static_cast<F>(scale * (p - g) / (p * (1.0 - p)));
  }
  return {loss * scale, std::move(grad)};
}

/// lambda * sum of squared weight values; biases are exempt.
template <typename F>
inline double weight_penalty(const std::vector<Param<F>>& params, double lambda) {
  if (lambda == 0.0) return 0.0;
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.is_weight) continue;
    for (const F v : p.value.data) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  return lambda * sq;
}

/// Full objective (data term plus weight penalty) and d(data)/d(pred). The
/// penalty's gradient is applied by sgd_step, not here.
template <typename F>
inline std::pair<double, Tensor<F>> bce_loss(const Tensor<F>& pred, const Tensor<F>& gt,
                                             const std::vector<Param<F>>& params, double lambda,
                                             LossNormalization norm) {
  auto [data, grad] = bce_data_loss(pred, gt, norm);
  return {data + weight_penalty(params, lambda), std::move(grad)};
}

// ---- optimizer ----

/// v <- momentum*v + (grad + 2*lambda*w); w <- w - lr*v; grads zeroed.
/// A step on all-zero grads is legal: the momentum buffer just decays.
template <typename F>
inline void sgd_step(std::vector<Param<F>>& params, const TrainConfig& cfg) {
  const F lr = static_cast<F>(cfg.learning_rate);
  const F mom = static_cast<F>(cfg.momentum);
  const F two_lambda = static_cast<F>(2.0 * cfg.weight_decay);
  for (auto& p : params) {
    const bool decay = p.is_weight && cfg.weight_decay > 0.0;
    for (std::size_t i = 0; i < p.value.data.size(); ++i) {
      F g = p.grad.data[i];
      if (decay) g += two_lambda * p.value.data[i];
      p.momentum.data[i] = mom * p.momentum.data[i] + g;
      p.value.data[i] -= lr * p.momentum.data[i];
    }
    p.grad.fill(F(0));
  }
}

// ---- binarization ----

/// Probability map to mask: strictly greater than 0.5 counts as smoke, so
/// exactly 0.5 lands on background.
template <typename F>
inline BinaryMask binarize(const Tensor<F>& pred, int n = 0, int c = 0) {
  BinaryMask m(pred.shape.w(), pred.shape.h());
  for (int y = 0; y < pred.shape.h(); ++y) {
    for (int x = 0; x < pred.shape.w(); ++x) {
      m.at(x, y) = pred.at(n, c, y, x) > F(0.5) ? 1 : 0;
    }
  }
  return m;
}

// ---- training loop ----

template <typename F>
struct TrainSample {
  Tensor<F> image;  // (1,3,h,w), values on [0,1]
  Tensor<F> gt;     // (1,1,h,w), strictly binary
  std::string name;
};

struct StepLog {
  long long step = 0;
  double data_loss = 0.0;
  double full_loss = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<StepLog> steps;
  std::vector<std::pair<long long, double>> epoch_miou;  // (1-based epoch, train mIoU)
};

/// Binarized train-set mIoU under the current parameters.
template <typename F>
inline double train_miou(const Network<F>& net, const std::vector<TrainSample<F>>& data) {
  std::vector<MaskPair> pairs;
  pairs.reserve(data.size());
  for (const auto& s : data) {
    pairs.emplace_back(binarize(net.forward(s.image).fused), binarize(s.gt));
  }
  return miou(pairs);
}

namespace detail {

template <typename F>
inline void check_sample(const TrainSample<F>& s, const Shape& img0, const Shape& gt0) {
  if (s.image.shape != img0 || s.gt.shape != gt0) {
    throw ShapeError("train: sample \"" + s.name + "\" has image " + s.image.shape.str() +
                     " / gt " + s.gt.shape.str() + ", expected " + img0.str() + " / " + gt0.str());
  }
}

template <typename F>
inline void fill_batch(const std::vector<TrainSample<F>>& data, const std::vector<int>& order,
                       int first, Tensor<F>& img, Tensor<F>& gt) {
  const std::size_t img_n = img.numel() / img.shape.n();
  const std::size_t gt_n = gt.numel() / gt.shape.n();
  for (int b = 0; b < img.shape.n(); ++b) {
    const TrainSample<F>& s = data[order[first + b]];
    std::copy(s.image.data.begin(), s.image.data.end(), img.data.begin() + b * img_n);
    std::copy(s.gt.data.begin(), s.gt.data.end(), gt.data.begin() + b * gt_n);
  }
}

}  // namespace detail

/// Epoch-shuffled mini-batch SGD on the fused map (plus optional auxiliary
/// losses on the coarse/fine maps). Deterministic in cfg.seed: the shuffle is
/// the only randomness. The remainder batch of each epoch is dropped; when
/// the dataset is smaller than batch_size the whole dataset is one batch.
template <typename F>
inline TrainHistory train(
    Network<F>& net, const std::vector<TrainSample<F>>& data, const TrainConfig& cfg,
    const std::function<void(long long, const Network<F>&)>& on_checkpoint = {},
    std::ostream* log = nullptr) {
  cfg.validate();
  if (data.empty()) throw ConfigError("train: empty dataset");

  const Shape img0 = data[0].image.shape;
  if (img0.n() != 1 || img0.c() != 3) {
    throw ShapeError("train: samples must be (1,3,h,w), got " + img0.str());
  }
  const Shape gt0(1, 1, img0.h(), img0.w());
  for (const auto& s : data) detail::check_sample(s, img0, gt0);

  const int n = static_cast<int>(data.size());
  const int bsz = std::min(cfg.batch_size, n);
  const int batches_per_epoch = n / bsz;
  const long long total_steps =
      cfg.epochs > 0 ? static_cast<long long>(cfg.epochs) * batches_per_epoch : cfg.max_steps;

  TrainHistory hist;
  long long step = 0;
  long long last_checkpoint = -1;
  if (total_steps == 0) {
    if (on_checkpoint) on_checkpoint(0, net);
    return hist;
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);

  Tensor<F> bimg(Shape(bsz, 3, img0.h(), img0.w()));
  Tensor<F> bgt(Shape(bsz, 1, img0.h(), img0.w()));
  ForwardTrace<F> trace;
  const auto t0 = std::chrono::steady_clock::now();

  for (long long epoch = 0; step < total_steps; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int b = 0; b < batches_per_epoch && step < total_steps; ++b) {
      detail::fill_batch(data, order, b * bsz, bimg, bgt);

      const PredictionBundle<F> bundle = net.forward(bimg, trace);
      auto [data_loss, fused_grad] = bce_data_loss(bundle.fused, bgt, cfg.loss_normalization);
      std::vector<std::pair<int, Tensor<F>>> seeds;
      seeds.emplace_back(net.fused_node(), std::move(fused_grad));
      if (cfg.aux_weight_coarse > 0.0) {
        auto [l, g] = bce_data_loss(bundle.coarse, bgt, cfg.loss_normalization);
        data_loss += cfg.aux_weight_coarse * l;
        for (auto& v : g.data) v *= static_cast<F>(cfg.aux_weight_coarse);
        seeds.emplace_back(net.coarse_node(), std::move(g));
      }
      if (cfg.aux_weight_fine > 0.0 && bundle.fine) {
        auto [l, g] = bce_data_loss(*bundle.fine, bgt, cfg.loss_normalization);
        data_loss += cfg.aux_weight_fine * l;
        for (auto& v : g.data) v *= static_cast<F>(cfg.aux_weight_fine);
        seeds.emplace_back(net.fine_node(), std::move(g));
      }
      const double full_loss = data_loss + weight_penalty(net.params(), cfg.weight_decay);

      net.zero_grads();
      net.backward(trace, seeds);
      sgd_step(net.params(), cfg);
      ++step;

      const double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      hist.steps.push_back({step, data_loss, full_loss, seconds});
      if (log) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "step %6lld  data %.6f  full %.6f  %.1fs\n", step,
                      data_loss, full_loss, seconds);
        *log << buf << std::flush;
      }
      if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && on_checkpoint) {
        on_checkpoint(step, net);
        last_checkpoint = step;
      }
    }
    if (cfg.track_miou) hist.epoch_miou.emplace_back(epoch + 1, train_miou(net, data));
  }
  if (on_checkpoint && last_checkpoint != step) on_checkpoint(step, net);
  return hist;
}

// ---- history persistence ----

/// CSV with one row per step. The seconds column is wall time and is the one
/// field exempt from bitwise determinism guarantees.
inline void write_history_csv(const TrainHistory& hist, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "step,data_loss,full_loss,seconds\n";
  char buf[160];
  for (const StepLog& s : hist.steps) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.3f\n", s.step, s.data_loss, s.full_loss,
                  s.seconds);
    out << buf;
  }
  if (!out) throw IoError("short write on " + path.string());
}

}  // namespace smokeseg
