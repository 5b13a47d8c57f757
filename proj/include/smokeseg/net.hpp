#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "smokeseg/ops.hpp"
#include "smokeseg/rng.hpp"

// Two-path encoder-decoder segmentation network.
//
// Path 1: VGG16-style encoder (blocks 1-5: 2,2,3,3,3 convs, pools after
// blocks 1-4) and an asymmetric decoder (9 convs, 4 upsamples, 2 skip
// concatenations), ending in a 1x1 sigmoid prediction head. Path 2: a shallow
// encoder-decoder (7 convs / 2 pools down, 4 convs / 2 upsamples / 2 skips
// up) with its own head. Fusion adds the two post-sigmoid maps and applies a
// 1x1 conv + sigmoid.
//
// Skip wiring: the last conv output of an encoder block is taken pre-pool, so
// decoder and skip resolutions agree without resampling. Concatenation always
// places trunk channels before skip channels.

namespace smokeseg {

/// Exact channel-width multiplier (width_scale), kept rational so rounding is
/// reproducible bit for bit.
struct Rational {
  int num = 1;
  int den = 1;

  double value() const { return static_cast<double>(num) / den; }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
  bool operator==(const Rational& o) const {
    return static_cast<long long>(num) * o.den == static_cast<long long>(o.num) * den;
  }
};

enum class FusionMode { UpsampleConcat, DeconvAdd };

inline const char* fusion_mode_name(FusionMode m) {
  return m == FusionMode::UpsampleConcat ? "upsample_concat" : "deconv_add";
}

struct NetConfig {
  Rational width_scale{1, 1};
  bool use_path2 = true;
  bool skips_path1 = true;
  bool skips_path2 = true;
  FusionMode fusion_mode = FusionMode::UpsampleConcat;
  std::uint64_t seed = 0;

  /// Round-half-up channel scaling with a floor of one channel.
  int scale_channels(int c) const {
    const long long scaled =
        (2LL * c * num_ll() + den_ll()) / (2LL * den_ll());  // floor(c*num/den + 1/2)
    return scaled < 1 ? 1 : static_cast<int>(scaled);
  }

  void validate() const {
    if (width_scale.num < 1 || width_scale.den < 1 || width_scale.num > width_scale.den) {
      throw ConfigError("net: width_scale must be a rational in (0,1], got " + width_scale.str());
    }
    // narrowest layer of the tables must survive rounding: round(64*scale) >= 1
    if (128LL * num_ll() < den_ll()) {
      throw ConfigError("net: width_scale " + width_scale.str() +
                        " rounds a 64-channel layer to zero");
    }
  }

 private:
  long long num_ll() const { return width_scale.num; }
  long long den_ll() const { return width_scale.den; }
};

enum class LayerOp { Input, Conv, Deconv, Relu, Sigmoid, MaxPool, Upsample, Concat, Add };

inline const char* layer_op_name(LayerOp op) {
  switch (op) {
    case LayerOp::Input: return "input";
    case LayerOp::Conv: return "conv";
    case LayerOp::Deconv: return "deconv";
    case LayerOp::Relu: return "relu";
    case LayerOp::Sigmoid: return "sigmoid";
    case LayerOp::MaxPool: return "maxpool";
    case LayerOp::Upsample: return "upsample";
    case LayerOp::Concat: return "concat";
    case LayerOp::Add: return "add";
  }
  return "?";
}

struct LayerSpec {
  LayerOp op;
  std::string name;
  int in0 = -1;
  int in1 = -1;   // concat/add second input
  int kernel = 0; // conv: 1 or 3; deconv: 2
  int cin = 0;
  int cout = 0;
  int wparam = -1;
  int bparam = -1;
};

struct ParamSpec {
  std::string name;
  Shape shape;
  int fan_in = 0;  // 0 for biases (zero-initialized)
};

struct GraphSpec {
  NetConfig config;
  std::vector<LayerSpec> layers;
  std::vector<ParamSpec> params;
  int input = -1;
  int coarse = -1;
  int fine = -1;
  int fused = -1;
};

namespace detail {

class GraphBuilder {
 public:
  explicit GraphBuilder(const NetConfig& cfg) { g_.config = cfg; }

  int input() {
    LayerSpec l{LayerOp::Input, "input"};
    l.cout = 3;
    return push(l, 3);
  }

  int conv(const std::string& name, int in, int k, int cout) {
    LayerSpec l{LayerOp::Conv, name};
    l.in0 = in;
    l.kernel = k;
    l.cin = chan_[in];
    l.cout = cout;
    l.wparam = add_param(name + ".weight", Shape(k, k, l.cin, cout), k * k * l.cin);
    l.bparam = add_param(name + ".bias", Shape(1, 1, 1, cout), 0);
    return push(l, cout);
  }

  int conv_relu(const std::string& name, int in, int k, int cout) {
    int c = conv(name, in, k, cout);
    LayerSpec l{LayerOp::Relu, name + ".relu"};
    l.in0 = c;
    l.cin = l.cout = cout;
    return push(l, cout);
  }

  int deconv(const std::string& name, int in) {
    LayerSpec l{LayerOp::Deconv, name};
    l.in0 = in;
    l.kernel = 2;
    l.cin = chan_[in];
    l.cout = l.cin;  // width-preserving 2x2 stride-2 upsampling
    l.wparam = add_param(name + ".weight", Shape(2, 2, l.cin, l.cout), 4 * l.cin);
    l.bparam = add_param(name + ".bias", Shape(1, 1, 1, l.cout), 0);
    return push(l, l.cout);
  }

  int sigmoid(const std::string& name, int in) {
    LayerSpec l{LayerOp::Sigmoid, name};
    l.in0 = in;
    l.cin = l.cout = chan_[in];
    return push(l, l.cout);
  }

  int pool(const std::string& name, int in) {
    LayerSpec l{LayerOp::MaxPool, name};
    l.in0 = in;
    l.cin = l.cout = chan_[in];
    return push(l, l.cout);
  }

  int up(const std::string& name, int in) {
    LayerSpec l{LayerOp::Upsample, name};
    l.in0 = in;
    l.cin = l.cout = chan_[in];
    return push(l, l.cout);
  }

  int concat(const std::string& name, int trunk, int skip) {
    LayerSpec l{LayerOp::Concat, name};
    l.in0 = trunk;
    l.in1 = skip;
    l.cin = chan_[trunk];
    l.cout = chan_[trunk] + chan_[skip];
    return push(l, l.cout);
  }

  int add(const std::string& name, int a, int b) {
    LayerSpec l{LayerOp::Add, name};
    l.in0 = a;
    l.in1 = b;
    l.cin = l.cout = chan_[a];
    return push(l, l.cout);
  }

  int channels(int node) const { return chan_[node]; }

  GraphSpec take() { return std::move(g_); }

 private:
  int push(LayerSpec l, int out_channels) {
    g_.layers.push_back(std::move(l));
    chan_.push_back(out_channels);
    return static_cast<int>(g_.layers.size()) - 1;
  }

  int add_param(const std::string& name, Shape shape, int fan_in) {
    g_.params.push_back(ParamSpec{name, shape, fan_in});
    return static_cast<int>(g_.params.size()) - 1;
  }

  GraphSpec g_;
  std::vector<int> chan_;
};

}  // namespace detail

/// Builds the layer graph for a configuration. Pure structure: no parameter
/// storage is allocated here.
inline GraphSpec build_graph(const NetConfig& cfg) {
  cfg.validate();
  detail::GraphBuilder b(cfg);
  const auto sc = [&](int c) { return cfg.scale_channels(c); };
  const bool deconv_mode = cfg.fusion_mode == FusionMode::DeconvAdd;

  const int x = b.input();

  // A decoder block that merges a skip: upsample+concat by default,
  // deconv+add in the alternate fusion mode (conv output then matches the
  // skip width so the add is well-formed). Without a skip it degrades to
  // upsample+conv.
  const auto merge_block = [&](const std::string& name, int cur, int skip, int conv_out) {
    if (skip < 0) {
      cur = b.up(name + ".up", cur);
      return b.conv_relu(name + ".conv", cur, 3, conv_out);
    }
    if (deconv_mode) {
      cur = b.deconv(name + ".deconv", cur);
      cur = b.conv_relu(name + ".conv", cur, 3, b.channels(skip));
      return b.add(name + ".add", cur, skip);
    }
    cur = b.up(name + ".up", cur);
    cur = b.conv_relu(name + ".conv", cur, 3, conv_out);
    return b.concat(name + ".concat", cur, skip);
  };

  GraphSpec g;

  // ---- path 1 encoder: VGG16 blocks 1-5 ----
  const int p1_counts[5] = {2, 2, 3, 3, 3};
  const int p1_widths[5] = {64, 128, 256, 512, 512};
  int cur = x;
  int p1_skip3 = -1, p1_skip4 = -1;
  for (int bi = 0; bi < 5; ++bi) {
    const std::string prefix = "path1.enc.block" + std::to_string(bi + 1);
    for (int ci = 0; ci < p1_counts[bi]; ++ci) {
      cur = b.conv_relu(prefix + ".conv" + std::to_string(ci + 1), cur, 3, sc(p1_widths[bi]));
    }
    if (bi == 2) p1_skip3 = cur;
    if (bi == 3) p1_skip4 = cur;
    if (bi < 4) cur = b.pool(prefix + ".pool", cur);
  }

  // ---- path 1 decoder ----
  cur = merge_block("path1.dec.block6", cur, cfg.skips_path1 ? p1_skip4 : -1, sc(512));
  cur = merge_block("path1.dec.block7", cur, cfg.skips_path1 ? p1_skip3 : -1, sc(512));
  cur = b.conv_relu("path1.dec.block8.conv1", cur, 3, sc(256));
  cur = b.conv_relu("path1.dec.block8.conv2", cur, 3, sc(256));
  cur = b.conv_relu("path1.dec.block8.conv3", cur, 3, sc(256));
  cur = b.up("path1.dec.block9.up", cur);
  cur = b.conv_relu("path1.dec.block9.conv1", cur, 3, sc(128));
  cur = b.conv_relu("path1.dec.block9.conv2", cur, 3, sc(128));
  cur = b.up("path1.dec.block10.up", cur);
  cur = b.conv_relu("path1.dec.block10.conv1", cur, 3, sc(64));
  cur = b.conv_relu("path1.dec.block10.conv2", cur, 3, sc(64));
  const int coarse = b.sigmoid("path1.pred.sigmoid", b.conv("path1.pred.conv", cur, 1, 1));

  int fine = -1;
  int fused = coarse;
  if (cfg.use_path2) {
    // ---- path 2 encoder: VGG16 blocks 1-3, two pools ----
    const int p2_counts[3] = {2, 2, 3};
    const int p2_widths[3] = {64, 128, 256};
    int cur2 = x;
    int p2_skip1 = -1, p2_skip2 = -1;
    for (int bi = 0; bi < 3; ++bi) {
      const std::string prefix = "path2.enc.block" + std::to_string(bi + 1);
      for (int ci = 0; ci < p2_counts[bi]; ++ci) {
        cur2 = b.conv_relu(prefix + ".conv" + std::to_string(ci + 1), cur2, 3, sc(p2_widths[bi]));
      }
      if (bi == 0) p2_skip1 = cur2;
      if (bi == 1) p2_skip2 = cur2;
      if (bi < 2) cur2 = b.pool(prefix + ".pool", cur2);
    }

    // ---- path 2 decoder ----
    cur2 = merge_block("path2.dec.block4", cur2, cfg.skips_path2 ? p2_skip2 : -1, sc(256));
    cur2 = merge_block("path2.dec.block5", cur2, cfg.skips_path2 ? p2_skip1 : -1, sc(256));
    cur2 = b.conv_relu("path2.dec.block6.conv1", cur2, 3, sc(64));
    cur2 = b.conv_relu("path2.dec.block6.conv2", cur2, 3, sc(64));
    fine = b.sigmoid("path2.pred.sigmoid", b.conv("path2.pred.conv", cur2, 1, 1));

    // ---- fusion: add the post-sigmoid maps, 1x1 conv, sigmoid ----
    const int summed = b.add("fusion.add", coarse, fine);
    fused = b.sigmoid("fusion.sigmoid", b.conv("fusion.conv", summed, 1, 1));
  }

  g = b.take();
  g.input = x;
  g.coarse = coarse;
  g.fine = fine;
  g.fused = fused;

  std::unordered_set<std::string> names;
  for (const auto& p : g.params) {
    if (!names.insert(p.name).second) throw Error("net: duplicate parameter name " + p.name);
  }
  return g;
}

// ---- spatial trace ----

struct TraceRow {
  std::string name;
  LayerOp op;
  int c = 0, h = 0, w = 0;
};

/// Per-layer output shapes for a built graph at the given input size.
inline std::vector<TraceRow> trace_graph(const GraphSpec& g, int h, int w) {
  if (h % 16 != 0 || w % 16 != 0 || h < 16 || w < 16) {
    throw ShapeError("spatial_trace: input spatial dims must be positive multiples of 16, got " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  std::vector<TraceRow> rows(g.layers.size());
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    TraceRow r{l.name, l.op, 0, 0, 0};
    switch (l.op) {
      case LayerOp::Input:
        r.c = 3; r.h = h; r.w = w;
        break;
      case LayerOp::Conv:
        r.c = l.cout; r.h = rows[l.in0].h; r.w = rows[l.in0].w;
        break;
      case LayerOp::Deconv:
        r.c = l.cout; r.h = rows[l.in0].h * 2; r.w = rows[l.in0].w * 2;
        break;
      case LayerOp::Relu:
      case LayerOp::Sigmoid:
        r.c = rows[l.in0].c; r.h = rows[l.in0].h; r.w = rows[l.in0].w;
        break;
      case LayerOp::MaxPool:
        r.c = rows[l.in0].c; r.h = rows[l.in0].h / 2; r.w = rows[l.in0].w / 2;
        break;
      case LayerOp::Upsample:
        r.c = rows[l.in0].c; r.h = rows[l.in0].h * 2; r.w = rows[l.in0].w * 2;
        break;
      case LayerOp::Concat:
        if (rows[l.in0].h != rows[l.in1].h || rows[l.in0].w != rows[l.in1].w) {
          throw ShapeError("spatial_trace: concat spatial mismatch at " + l.name);
        }
        r.c = rows[l.in0].c + rows[l.in1].c; r.h = rows[l.in0].h; r.w = rows[l.in0].w;
        break;
      case LayerOp::Add:
        if (rows[l.in0].c != rows[l.in1].c || rows[l.in0].h != rows[l.in1].h ||
            rows[l.in0].w != rows[l.in1].w) {
          throw ShapeError("spatial_trace: add shape mismatch at " + l.name);
        }
        r.c = rows[l.in0].c; r.h = rows[l.in0].h; r.w = rows[l.in0].w;
        break;
    }
    rows[i] = std::move(r);
  }
  return rows;
}

inline std::vector<TraceRow> spatial_trace(const NetConfig& cfg, int h, int w) {
  return trace_graph(build_graph(cfg), h, w);
}

// ---- parameters and the runtime network ----

template <typename F>
struct Param {
  std::string name;
  Tensor<F> value;
  Tensor<F> grad;
  Tensor<F> momentum;
  bool is_weight = true;
};

template <typename F>
inline std::vector<Param<F>> init_params(const GraphSpec& g) {
  std::mt19937_64 rng(g.config.seed);
  std::vector<Param<F>> out;
  out.reserve(g.params.size());
  for (const ParamSpec& ps : g.params) {
    Param<F> p;
    p.name = ps.name;
    p.value = Tensor<F>(ps.shape);
    p.grad = Tensor<F>(ps.shape);
    p.momentum = Tensor<F>(ps.shape);
    p.is_weight = ps.fan_in > 0;
    if (p.is_weight) {
      // draws happen in double so float and double builds share init values
      const double stddev = std::sqrt(2.0 / ps.fan_in);
      for (auto& v : p.value.data) v = static_cast<F>(truncated_normal(rng, stddev));
    }
    out.push_back(std::move(p));
  }
  return out;
}

template <typename F>
struct PredictionBundle {
  Tensor<F> coarse;
  Tensor<F> fused;
  std::optional<Tensor<F>> fine;
};

/// Per-forward op records: the saved values and pooling indices the adjoints
/// need. Owned by the caller so const forward passes can run concurrently.
template <typename F>
struct ForwardTrace {
  std::vector<Tensor<F>> value;
  std::vector<std::vector<std::uint8_t>> pool_arg;
  std::vector<Tensor<F>> grad;
  std::vector<char> grad_set;
  bool complete = false;
};

template <typename F>
class Network {
 public:
  explicit Network(GraphSpec graph) : graph_(std::move(graph)), params_(init_params<F>(graph_)) {
    trace_graph(graph_, 16, 16);  // wiring self-check
  }

  static Network build(const NetConfig& cfg) { return Network(build_graph(cfg)); }

  const NetConfig& config() const { return graph_.config; }
  const GraphSpec& graph() const { return graph_; }
  std::vector<Param<F>>& params() { return params_; }
  const std::vector<Param<F>>& params() const { return params_; }

  int input_node() const { return graph_.input; }
  int coarse_node() const { return graph_.coarse; }
  int fine_node() const { return graph_.fine; }
  int fused_node() const { return graph_.fused; }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.value.numel();
    return total;
  }

  PredictionBundle<F> forward(const Tensor<F>& input) const {
    ForwardTrace<F> scratch;
    return forward(input, scratch);
  }

  /// Recording forward pass; the trace feeds backward().
  PredictionBundle<F> forward(const Tensor<F>& input, ForwardTrace<F>& t) const {
    if (input.shape.c() != 3) {
      throw ShapeError("network: input must have 3 channels, got " + input.shape.str());
    }
    if (input.shape.h() % 16 != 0 || input.shape.w() % 16 != 0) {
      throw ShapeError("network: input spatial dims must be multiples of 16 (four pooling "
                       "stages), got " + input.shape.str());
    }
    const std::size_t L = graph_.layers.size();
    t.value.assign(L, Tensor<F>{});
    t.pool_arg.assign(L, {});
    t.grad.clear();
    t.grad_set.assign(L, 0);

    for (std::size_t i = 0; i < L; ++i) {
      const LayerSpec& l = graph_.layers[i];
      switch (l.op) {
        case LayerOp::Input:
          t.value[i] = input;
          break;
        case LayerOp::Conv:
          t.value[i] = conv2d(t.value[l.in0], params_[l.wparam].value, params_[l.bparam].value);
          break;
        case LayerOp::Deconv:
          t.value[i] = conv_transpose2d(t.value[l.in0], params_[l.wparam].value,
                                        params_[l.bparam].value);
          break;
        case LayerOp::Relu:
          t.value[i] = relu(t.value[l.in0]);
          break;
        case LayerOp::Sigmoid:
          t.value[i] = sigmoid(t.value[l.in0]);
          break;
        case LayerOp::MaxPool: {
          auto [out, arg] = maxpool2x2(t.value[l.in0]);
          t.value[i] = std::move(out);
          t.pool_arg[i] = std::move(arg);
          break;
        }
        case LayerOp::Upsample:
          t.value[i] = upsample_nearest2x(t.value[l.in0]);
          break;
        case LayerOp::Concat:
          t.value[i] = concat_channels(t.value[l.in0], t.value[l.in1]);
          break;
        case LayerOp::Add:
          t.value[i] = add(t.value[l.in0], t.value[l.in1]);
          break;
      }
    }
    t.complete = true;

    PredictionBundle<F> bundle;
    bundle.coarse = t.value[graph_.coarse];
    bundle.fused = t.value[graph_.fused];
    if (graph_.fine >= 0) bundle.fine = t.value[graph_.fine];
    return bundle;
  }

  /// Reverse sweep. `seeds` are (node id, dL/d node output) pairs; gradients
  /// accumulate into Param::grad and into t.grad for every reached node
  /// (including the input). The trace's saved values are freed afterwards.
  void backward(ForwardTrace<F>& t, const std::vector<std::pair<int, Tensor<F>>>& seeds) {
    if (!t.complete) {
      throw Error("network: backward called without a recorded forward pass");
    }
    const std::size_t L = graph_.layers.size();
    t.grad.assign(L, Tensor<F>{});
    t.grad_set.assign(L, 0);

    auto ensure = [&](int node) -> Tensor<F>& {
      if (!t.grad_set[node]) {
        t.grad[node] = Tensor<F>(t.value[node].shape);
        t.grad_set[node] = 1;
      }
      return t.grad[node];
    };

    for (const auto& [node, g] : seeds) {
      if (node < 0 || node >= static_cast<int>(L)) throw Error("network: bad seed node id");
      if (g.shape != t.value[node].shape) {
        throw ShapeError("network: seed gradient shape " + g.shape.str() + " != node value " +
                         t.value[node].shape.str() + " at " + graph_.layers[node].name);
      }
      Tensor<F>& dst = ensure(node);
      for (std::size_t i = 0; i < g.data.size(); ++i) dst.data[i] += g.data[i];
    }

    for (int i = static_cast<int>(L) - 1; i >= 0; --i) {
      if (!t.grad_set[i]) continue;
      const LayerSpec& l = graph_.layers[i];
      const Tensor<F>& g = t.grad[i];
      switch (l.op) {
        case LayerOp::Input:
          break;
        case LayerOp::Conv:
          conv2d_backward(t.value[l.in0], params_[l.wparam].value, g, ensure(l.in0),
                          params_[l.wparam].grad, params_[l.bparam].grad);
          break;
        case LayerOp::Deconv:
          conv_transpose2d_backward(t.value[l.in0], params_[l.wparam].value, g, ensure(l.in0),
                                    params_[l.wparam].grad, params_[l.bparam].grad);
          break;
        case LayerOp::Relu:
          relu_backward(t.value[l.in0], g, ensure(l.in0));
          break;
        case LayerOp::Sigmoid:
          sigmoid_backward(t.value[i], g, ensure(l.in0));
          break;
        case LayerOp::MaxPool:
          maxpool2x2_backward(t.pool_arg[i], g, ensure(l.in0));
          break;
        case LayerOp::Upsample:
          upsample_nearest2x_backward(g, ensure(l.in0));
          break;
        case LayerOp::Concat:
          concat_channels_backward(g, t.value[l.in0].shape.c(), ensure(l.in0), ensure(l.in1));
          break;
        case LayerOp::Add:
          add_backward(g, ensure(l.in0), ensure(l.in1));
          break;
      }
    }

    // op records are per batch; free them once consumed
    t.value.clear();
    t.pool_arg.clear();
    t.complete = false;
  }

  void zero_grads() {
    for (auto& p : params_) p.grad.fill(F(0));
  }

  /// Mirrors this network's parameter values into another precision.
  template <typename G>
  Network<G> cast() const {
    Network<G> out(graph_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.params()[i].value = params_[i].value.template cast<G>();
    }
    return out;
  }

 private:
  GraphSpec graph_;
  std::vector<Param<F>> params_;
};

}  // namespace smokeseg
