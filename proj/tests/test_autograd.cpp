#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>
#include <string>

#include "smokeseg/gradcheck.hpp"
#include "smokeseg/net.hpp"
#include "smokeseg/ops.hpp"
#include "smokeseg/rng.hpp"

// Analytic gradients validated against central finite differences, per op and
// through the whole network, plus proof the checker can catch a planted bug.

namespace {

using smokeseg::Shape;
using smokeseg::Network;
using smokeseg::Tensor;

/// Restores the fault-injection flag even if an assertion throws.
class CorruptAdjointGuard {
 public:
  CorruptAdjointGuard() { smokeseg::detail::corrupt_sigmoid_adjoint.store(true); }
  ~CorruptAdjointGuard() { smokeseg::detail::corrupt_sigmoid_adjoint.store(false); }
};

TEST(CentralDifference, ExactOnLinearFunction) {
  double x = 1.5;
  const auto f = [&]() { return 3.0 * x + 1.0; };
  const double d = smokeseg::central_difference(f, x);
  EXPECT_NEAR(d, 3.0, 1e-9);
  EXPECT_DOUBLE_EQ(x, 1.5);  // probe site restored
}

TEST(CentralDifference, QuadraticDerivativeAtPoint) {
  double x = 2.0;
  const auto f = [&]() { return x * x; };
  EXPECT_NEAR(smokeseg::central_difference(f, x), 4.0, 1e-8);
}

TEST(RelativeError, NormalizesByLargerMagnitude) {
  EXPECT_DOUBLE_EQ(smokeseg::relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(smokeseg::relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(smokeseg::relative_error(1.0, 2.0), 0.5);
  EXPECT_DOUBLE_EQ(smokeseg::relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(smokeseg::relative_error(-1.0, 1.0), 2.0);
}

TEST(OpGradients, AllOpsPassFiniteDifferenceCheck) {
  const auto results = smokeseg::run_op_checks(2024);
  ASSERT_FALSE(results.empty());
  for (const auto& r : results) {
    EXPECT_GT(r.checked, 0) << r.op;
    EXPECT_TRUE(r.pass()) << r.op << " max_rel_err=" << r.max_rel_err;
  }
}

TEST(OpGradients, CoversEveryListedOp) {
  const auto results = smokeseg::run_op_checks(1);
  std::set<std::string> seen;
  for (const auto& r : results) seen.insert(r.op);
  std::set<std::string> want;
  for (const auto& n : smokeseg::op_check_names()) want.insert(n);
  EXPECT_EQ(seen, want);
}

TEST(OpGradients, LinearOpsAreExactToRoundoff) {
  // per-coordinate these are linear maps, so the central difference has no
  // truncation term and only roundoff remains
  const std::set<std::string> linear = {"conv2d_k1", "upsample_nearest2x", "concat_channels",
                                        "add"};
  for (const auto& r : smokeseg::run_op_checks(7)) {
    if (linear.count(r.op)) {
      EXPECT_LE(r.max_rel_err, 1e-9) << r.op;
    }
  }
}

TEST(OpGradients, StableAcrossSeeds) {
  for (std::uint64_t seed : {11ull, 22ull, 33ull}) {
    for (const auto& r : smokeseg::run_op_checks(seed)) {
      EXPECT_TRUE(r.pass()) << r.op << " seed=" << seed << " err=" << r.max_rel_err;
    }
  }
}

TEST(OpGradients, PlantedSignFlipIsCaught) {
  CorruptAdjointGuard guard;
  bool sigmoid_failed = false;
  for (const auto& r : smokeseg::run_op_checks(2024)) {
    if (r.op == "sigmoid") {
      sigmoid_failed = !r.pass();
      EXPECT_GT(r.max_rel_err, 0.1) << "sign flip should blow far past tolerance";
    }
  }
  EXPECT_TRUE(sigmoid_failed);
}

TEST(NetworkGradients, WholeNetMatchesFiniteDifferences) {
  smokeseg::NetConfig cfg;
  cfg.width_scale = {1, 16};
  Network<double> net = Network<double>::build(cfg);
  std::mt19937_64 rng(smokeseg::mix64(20240817ull ^ 0x9e3779b97f4a7c15ull));
  smokeseg::randomize_biases(net, rng);
  Tensor<double> input(Shape(1, 3, 16, 16));
  for (auto& v : input.data) v = smokeseg::uniform01(rng);
  const auto rep = smokeseg::check_network_gradients(net, input, 12, 20240817);
  EXPECT_TRUE(rep.pass()) << rep.worst;
  EXPECT_GT(rep.checked, 100);
  EXPECT_LE(rep.max_rel_err, smokeseg::kGradTolerance) << rep.worst;
}

TEST(NetworkGradients, PlantedBugFailsWholeNetCheck) {
  CorruptAdjointGuard guard;
  smokeseg::NetConfig cfg;
  cfg.width_scale = {1, 16};
  Network<double> net = Network<double>::build(cfg);
  std::mt19937_64 rng(1);
  smokeseg::randomize_biases(net, rng);
  Tensor<double> input(Shape(1, 3, 16, 16));
  for (auto& v : input.data) v = smokeseg::uniform01(rng);
  const auto rep = smokeseg::check_network_gradients(net, input, 6, 1);
  EXPECT_FALSE(rep.pass());
  EXPECT_GT(rep.max_rel_err, 0.1);
}

TEST(NetworkGradients, DeconvFusionVariantPasses) {
  smokeseg::NetConfig cfg;
  cfg.width_scale = {1, 16};
  cfg.fusion_mode = smokeseg::FusionMode::DeconvAdd;
  Network<double> net = Network<double>::build(cfg);
  std::mt19937_64 rng(smokeseg::mix64(5));
  smokeseg::randomize_biases(net, rng);
  Tensor<double> input(Shape(1, 3, 16, 16));
  for (auto& v : input.data) v = smokeseg::uniform01(rng);
  const auto rep = smokeseg::check_network_gradients(net, input, 8, 5);
  EXPECT_TRUE(rep.pass()) << rep.worst;
}

TEST(NetworkGradients, InputGradientIsChecked) {
  // the report covers parameters and the input tensor; with biases
  // randomized and a dense projection the input should contribute probes
  smokeseg::NetConfig cfg;
  cfg.width_scale = {1, 16};
  Network<double> net = Network<double>::build(cfg);
  std::mt19937_64 rng(9);
  smokeseg::randomize_biases(net, rng);
  Tensor<double> input(Shape(1, 3, 16, 16));
  for (auto& v : input.data) v = smokeseg::uniform01(rng);
  const auto rep = smokeseg::check_network_gradients(net, input, 4, 9);
  // params (two per conv across ~30 convs) plus input, minus skipped probes
  EXPECT_GE(rep.checked, 50);
  EXPECT_TRUE(rep.pass()) << rep.worst;
}

}  // namespace
