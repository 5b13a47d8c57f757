#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "smokeseg/net.hpp"

// Finite-difference verification of the reverse sweep. Everything here runs
// in double: central differences at step 1e-5 lose too many digits in float.

namespace smokeseg {

constexpr double kFdStep = 1e-5;
constexpr double kGradTolerance = 1e-4;

// Probe validity bounds for the whole-network check. Forward evaluation noise
// is about 1e-15 absolute on the projected loss, so a central difference at
// step 1e-5 carries about 5e-11 of noise: gradients below kProbeMinMagnitude
// cannot be resolved against kGradTolerance no matter how correct they are.
// kFdAgree* bound the allowed disagreement between the step-h and step-h/2
// estimates; on a smooth stretch they agree to truncation (~h^2), while a
// relu kink or pooling argmax switch inside the step interval makes them
// diverge, flagging the probe as one where no derivative exists to compare.
constexpr double kProbeMinMagnitude = 2e-5;
constexpr double kFdAgreeRel = 1e-4;
constexpr double kFdAgreeAbs = 2e-9;
constexpr double kTinyNumericFloor = 1e-7;

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Central difference of f() with respect to one scalar slot. Restores the
/// slot afterwards.
template <typename Fn>
double central_difference(Fn&& f, double& slot, double step = kFdStep) {
  const double saved = slot;
  slot = saved + step;
  const double fp = f();
  slot = saved - step;
  const double fm = f();
  slot = saved;
  return (fp - fm) / (2.0 * step);
}

/// Fixed random projection so a tensor-valued output reduces to one scalar:
/// L = sum(out * R) exercises every output coordinate with distinct weights.
inline Tensor<double> projection_tensor(const Shape& shape, std::mt19937_64& rng) {
  Tensor<double> r(shape);
  for (auto& v : r.data) v = uniform01(rng) * 2.0 - 1.0;
  return r;
}

inline double project(const Tensor<double>& t, const Tensor<double>& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.data.size(); ++i) acc += t.data[i] * r.data[i];
  return acc;
}

struct GradCheckReport {
  int checked = 0;
  int failures = 0;
  double max_rel_err = 0.0;
  std::string worst;
  // probes rejected because finite differences cannot judge them there
  int skipped_nonsmooth = 0;   // step interval straddles a kink or argmax switch
  int skipped_below_floor = 0; // analytic and numeric both under FD resolution

  bool pass() const { return failures == 0; }

  void record(const std::string& where, double analytic, double numeric, double tol) {
    const double err = relative_error(analytic, numeric);
    ++checked;
    if (err > max_rel_err) {
      max_rel_err = err;
      worst = where + " analytic=" + std::to_string(analytic) +
              " numeric=" + std::to_string(numeric);
    }
    if (err > tol) ++failures;
  }
};

namespace detail {

inline std::vector<std::size_t> sample_indices(std::size_t numel, int want, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  if (static_cast<std::size_t>(want) >= numel) {
    out.resize(numel);
    for (std::size_t i = 0; i < numel; ++i) out[i] = i;
    return out;
  }
  std::unordered_set<std::size_t> seen;
  while (out.size() < static_cast<std::size_t>(want)) {
    const std::size_t idx = rng() % numel;
    if (seen.insert(idx).second) out.push_back(idx);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

// ---- per-op checks ----

struct OpCheckResult {
  std::string op;
  int checked = 0;
  double max_rel_err = 0.0;

  bool pass(double tol = kGradTolerance) const { return max_rel_err <= tol; }
};

/// Exhaustive finite-difference check of one op. `fwd` recomputes the output
/// from the current contents of `inputs`; `bwd` maps an output adjoint to
/// input gradients aligned with `inputs`.
template <typename Forward, typename Backward>
inline OpCheckResult check_op(const std::string& name, std::vector<Tensor<double>*> inputs,
                              Forward&& fwd, Backward&& bwd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Tensor<double> out = fwd();
  const Tensor<double> proj = projection_tensor(out.shape, rng);
  const std::vector<Tensor<double>> analytic = bwd(proj);
  if (analytic.size() != inputs.size()) {
    throw Error("check_op(" + name + "): gradient count mismatch");
  }

  OpCheckResult res;
  res.op = name;
  const auto loss = [&]() { return project(fwd(), proj); };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double>& t = *inputs[k];
    for (std::size_t i = 0; i < t.data.size(); ++i) {
      const double numeric = central_difference(loss, t.data[i]);
      const double err = relative_error(analytic[k].data[i], numeric);
      ++res.checked;
      res.max_rel_err = std::max(res.max_rel_err, err);
    }
  }
  return res;
}

namespace detail {

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t.data) v = lo + (hi - lo) * uniform01(rng);
  return t;
}

// values bounded away from zero so the relu kink never sits within an FD step
inline Tensor<double> random_tensor_off_kink(const Shape& shape, std::mt19937_64& rng) {
  Tensor<double> t(shape);
  for (auto& v : t.data) {
    const double mag = 0.1 + 0.9 * uniform01(rng);
    v = uniform01(rng) < 0.5 ? -mag : mag;
  }
  return t;
}

// every 2x2 window gets well-separated values so maxpool argmaxes are stable
// under the FD step
inline Tensor<double> random_tensor_pool_safe(const Shape& shape, std::mt19937_64& rng) {
  for (;;) {
    Tensor<double> t = random_tensor(shape, rng, 0.0, 1.0);
    bool ok = true;
    for (int n = 0; n < shape.n() && ok; ++n) {
      for (int c = 0; c < shape.c() && ok; ++c) {
        for (int y = 0; y + 1 < shape.h() && ok; y += 2) {
          for (int x = 0; x + 1 < shape.w() && ok; x += 2) {
            const double v[4] = {t.at(n, c, y, x), t.at(n, c, y, x + 1), t.at(n, c, y + 1, x),
                                 t.at(n, c, y + 1, x + 1)};
            for (int a = 0; a < 4 && ok; ++a) {
              for (int b = a + 1; b < 4; ++b) {
                if (std::abs(v[a] - v[b]) < 1e-3) { ok = false; break; }
              }
            }
          }
        }
      }
    }
    if (ok) return t;
  }
}

}  // namespace detail

/// Finite-difference checks for every differentiable op, exhaustive over
/// small tensors. Deterministic in `seed`.
inline std::vector<OpCheckResult> run_op_checks(std::uint64_t seed) {
  using detail::random_tensor;
  std::vector<OpCheckResult> results;
  int op_index = 0;
  const auto op_rng = [&]() { return std::mt19937_64(mix64(seed ^ static_cast<std::uint64_t>(op_index++))); };

  {
    auto rng = op_rng();
    Tensor<double> x = random_tensor(Shape(2, 3, 4, 5), rng);
    Tensor<double> w = random_tensor(Shape(3, 3, 3, 4), rng);
    Tensor<double> b = random_tensor(Shape(1, 1, 1, 4), rng);
    results.push_back(check_op(
        "conv2d_k3", {&x, &w, &b}, [&] { return conv2d(x, w, b); },
        [&](const Tensor<double>& gout) {
          Tensor<double> gx(x.shape), gw(w.shape), gb(b.shape);
          conv2d_backward(x, w, gout, gx, gw, gb);
          return std::vector<Tensor<double>>{gx, gw, gb};
        },
        rng()));
  }
  {
    auto rng = op_rng();
    Tensor<double> x = random_tensor(Shape(1, 4, 3, 3), rng);
    Tensor<double> w = random_tensor(Shape(1, 1, 4, 2), rng);
    Tensor<double> b = random_tensor(Shape(1, 1, 1, 2), rng);
    results.push_back(check_op(
        "conv2d_k1", {&x, &w, &b}, [&] { return conv2d(x, w, b); },
        [&](const Tensor<double>& gout) {
          Tensor<double> gx(x.shape), gw(w.shape), gb(b.shape);
          conv2d_backward(x, w, gout, gx, gw, gb);
          return std::vector<Tensor<double>>{gx, gw, gb};
        },
        rng()));
  }
  {
    auto rng = op_rng();
    Tensor<double> x = random_tensor(Shape(2, 3, 3, 4), rng);
    Tensor<double> w = random_tensor(Shape(2, 2, 3, 2), rng);
    Tensor<double> b = random_tensor(Shape(1, 1, 1, 2), rng);
    results.push_back(check_op(
        "conv_transpose2d", {&x, &w, &b}, [&] { return conv_transpose2d(x, w, b); },
        [&](const Tensor<double>& gout) {
          Tensor<double> gx(x.shape), gw(w.shape), gb(b.shape);
          conv_transpose2d_backward(x, w, gout, gx, gw, gb);
          return std::vector<Tensor<double>>{gx, gw, gb};
        },
        rng()));
  }
  {
    auto rng = op_rng();
    Tensor<double> x = detail::random_tensor_pool_safe(Shape(2, 2, 4, 6), rng);
    results.push_back(check_op(
        "maxpool2x2", {&x}, [&] { return maxpool2x2(x).first; },
        [&](const Tensor<double>& gout) {
          Tensor<double> gx(x.shape);
          maxpool2x2_backward(maxpool2x2(x).second, gout, gx);
          return std::vector<Tensor<double>>{gx};
        },
        rng()));
  }
  {
    auto rng = op_rng();
    Tensor<double> x = random_tensor(Shape(1, 2, 3, 4), rng);
    results.push_back(check_op(
        "upsample_nearest2x", {&x}, [&] { return upsample_nearest2x(x); },
        [&](const Tensor<double>& gout) {
          Tensor<double> gx(x.shape);
          upsample_nearest2x_backward(gout, gx);
          return std::vector<Tensor<double>>{gx};
        },
        rng()));
  }
  {
    auto rng = op_rng();
    Tensor<double> x = detail::random_tensor_off_kink(Shape(2, 2, 3, 3), rng);
    results.push_back(check_op(
        "relu", {&x}, [&] { return relu(x); },
        [&](const Tensor<double>& gout) {
          Tensor<double> gx(x.shape);
          relu_backward(x, gout, gx);
          return std::vector<Tensor<double>>{gx};
        },
        rng()));
  }
  {
    auto rng = op_rng();
    Tensor<double> x = random_tensor(Shape(2, 2, 3, 3), rng, -2.0, 2.0);
    results.push_back(check_op(
        "sigmoid", {&x}, [&] { return sigmoid(x); },
        [&](const Tensor<double>& gout) {
          Tensor<double> gx(x.shape);
          sigmoid_backward(sigmoid(x), gout, gx);
          return std::vector<Tensor<double>>{gx};
        },
        rng()));
  }
  {
    auto rng = op_rng();
    Tensor<double> a = random_tensor(Shape(1, 2, 3, 3), rng);
    Tensor<double> b = random_tensor(Shape(1, 3, 3, 3), rng);
    results.push_back(check_op(
        "concat_channels", {&a, &b}, [&] { return concat_channels(a, b); },
        [&](const Tensor<double>& gout) {
          Tensor<double> ga(a.shape), gb(b.shape);
          concat_channels_backward(gout, a.shape.c(), ga, gb);
          return std::vector<Tensor<double>>{ga, gb};
        },
        rng()));
  }
  {
    auto rng = op_rng();
    Tensor<double> a = random_tensor(Shape(2, 2, 2, 3), rng);
    Tensor<double> b = random_tensor(Shape(2, 2, 2, 3), rng);
    results.push_back(check_op(
        "add", {&a, &b}, [&] { return add(a, b); },
        [&](const Tensor<double>& gout) {
          Tensor<double> ga(a.shape), gb(b.shape);
          add_backward(gout, ga, gb);
          return std::vector<Tensor<double>>{ga, gb};
        },
        rng()));
  }
  return results;
}

/// The ops run_op_checks covers, for coverage-by-enumeration assertions.
inline std::vector<std::string> op_check_names() {
  return {"conv2d_k3", "conv2d_k1", "conv_transpose2d", "maxpool2x2",
          "upsample_nearest2x", "relu", "sigmoid", "concat_channels", "add"};
}

/// Moves every bias off its zero initialization to a random value with
/// magnitude in [lo, hi]. Finite-difference checks need this: with zero
/// biases, any site whose whole receptive patch is relu-dead has a
/// preactivation of exactly 0.0, parking it on the kink where the two-sided
/// difference quotient estimates no derivative at all. At a generic point the
/// dead sites sit a bias-magnitude away from the kink instead, far beyond any
/// probe displacement.
inline void randomize_biases(Network<double>& net, std::mt19937_64& rng, double lo = 0.01,
                             double hi = 0.1) {
  for (auto& p : net.params()) {
    if (p.is_weight) continue;
    for (auto& v : p.value.data) {
      const double mag = lo + (hi - lo) * uniform01(rng);
      v = uniform01(rng) < 0.5 ? -mag : mag;
    }
  }
}

/// Compares analytic parameter and input gradients of the fused output
/// against central differences at sampled coordinates. Exhaustive probing of
/// every parameter is quadratic in network size; a fixed random sample per
/// tensor catches wiring and adjoint errors just as well.
///
/// Not every coordinate is a usable probe. The network is piecewise smooth
/// (relu kinks, pooling argmax switches), and at the fixed step the finite
/// difference is only a derivative estimate when both evaluations land on the
/// same smooth piece, so probes whose step-h and step-h/2 estimates disagree
/// are rejected as nonsmooth. Probes whose analytic gradient sits below the
/// double-precision FD resolution are not compared against the tolerance
/// either; they instead get a one-sided bound (a consistent numeric estimate
/// clearly above the analytic value means a lost gradient and fails). Both
/// skip kinds are counted in the report, and rejected candidates are replaced
/// from an oversampled pool so per-tensor coverage stays close to
/// samples_per_tensor.
inline GradCheckReport check_network_gradients(Network<double>& net, Tensor<double> input,
                                               int samples_per_tensor, std::uint64_t seed,
                                               double tol = kGradTolerance) {
  std::mt19937_64 rng(seed);

  ForwardTrace<double> trace;
  const PredictionBundle<double> bundle = net.forward(input, trace);
  const Tensor<double> proj = projection_tensor(bundle.fused.shape, rng);

  net.zero_grads();
  net.backward(trace, {{net.fused_node(), proj}});
  const Tensor<double> input_grad = trace.grad[net.input_node()];

  const auto loss = [&]() { return project(net.forward(input).fused, proj); };

  GradCheckReport report;
  const auto probe_tensor = [&](const std::string& name, Tensor<double>& value,
                                const Tensor<double>& grad) {
    const auto pool =
        detail::sample_indices(value.numel(), samples_per_tensor * 6, rng);
    int live = 0;
    for (std::size_t idx : pool) {
      if (live >= samples_per_tensor) break;
      const double analytic = grad.data[idx];
      const double num_h = central_difference(loss, value.data[idx], kFdStep);
      const double num_h2 = central_difference(loss, value.data[idx], kFdStep / 2.0);
      const bool smooth =
          std::abs(num_h - num_h2) <= std::max(kFdAgreeRel * std::abs(num_h), kFdAgreeAbs);
      if (!smooth) {
        ++report.skipped_nonsmooth;
        continue;
      }
      const std::string where = name + "[" + std::to_string(idx) + "]";
      if (std::abs(analytic) < kProbeMinMagnitude) {
        if (std::abs(num_h) > std::max(4.0 * std::abs(analytic), kTinyNumericFloor)) {
          report.record(where, analytic, num_h, tol);  // lost gradient, fails
        } else {
          ++report.skipped_below_floor;
        }
        continue;
      }
      report.record(where, analytic, num_h, tol);
      ++live;
    }
  };

  for (auto& p : net.params()) probe_tensor(p.name, p.value, p.grad);
  probe_tensor("input", input, input_grad);
  return report;
}

}  // namespace smokeseg
