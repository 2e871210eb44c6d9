#pragma once

// Static layer graph plus the Uception and 3-D U-net builders.
//
// A ModelGraph is an ordered list of nodes (each node only reads earlier
// nodes) and a list of named parameters. Forward passes never mutate the
// graph: activations live in a Trace returned to the caller, and backward
// turns a Trace into a Gradients record.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "uception/error.hpp"
#include "uception/layers.hpp"
#include "uception/rng.hpp"
#include "uception/tensor.hpp"

namespace uception {

enum class Arch : std::uint32_t { Uception = 0, UNet3d = 1, Custom = 2 };

struct ModelCfg {
  Arch arch = Arch::Uception;
  std::size_t depth = 10;  // per-branch channels at level 0
  std::size_t levels = 3;
  double dropout_rate = 0.25;
  std::size_t input_channels = 1;
  std::size_t output_channels = 1;
  // U-net level-0 width; 0 means "match the Uception parameter count".
  std::size_t unet_width = 0;
  std::uint64_t init_seed = 0;

  bool operator==(const ModelCfg&) const = default;
};

struct DeepBlockCfg {
  std::size_t in_channels = 1;
  std::size_t branch_depth = 1;
  std::size_t out_channels() const { return 4 * branch_depth; }
};

struct ReductionBlockCfg {
  std::size_t in_channels = 1;
  std::size_t branch_depth = 1;
  std::size_t out_channels() const { return in_channels + 2 * branch_depth; }
};

enum class NodeKind { Input, Conv, MaxPool, Upsample, Concat };
enum class Activation { None, Relu, Sigmoid };

struct Node {
  NodeKind kind = NodeKind::Input;
  std::string name;
  std::vector<std::size_t> inputs;
  std::size_t channels = 0;  // output channel count

  // Conv
  ConvSpec conv{};
  std::size_t weight = 0, bias = 0;
  Activation activation = Activation::None;
  bool dropout = false;

  // MaxPool
  Extent3 window{}, stride{};
  Padding padding = Padding::Valid;

  // Upsample
  std::size_t factor = 2;
};

template <class T>
struct Parameter {
  std::string name;
  Tensor5<T> value;
};

template <class T>
class ModelGraph {
 public:
  ModelGraph() = default;
  explicit ModelGraph(ModelCfg cfg) : cfg_(cfg) {}

  const ModelCfg& cfg() const { return cfg_; }
  ModelCfg& cfg() { return cfg_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }

  // Total downsampling factor the input extents must be divisible by.
  std::size_t divisor() const { return divisor_; }
  void set_divisor(std::size_t d) { divisor_ = d; }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& p : params_) total += p.value.size();
    return total;
  }

  std::optional<std::size_t> find_parameter(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    return std::nullopt;
  }

  std::size_t add_input(std::size_t channels) {
    if (!nodes_.empty()) {
      throw Error(ErrorCode::InvalidArgument, "input", "the input must be the first node");
    }
    Node n;
    n.kind = NodeKind::Input;
    n.name = "input";
    n.channels = channels;
    return push(std::move(n));
  }

  // Conv followed by an optional activation and (for hidden layers) dropout.
  // Weights are He-initialised from a stream keyed on the parameter index.
  std::size_t add_conv(std::size_t input, const ConvSpec& spec, Activation act, bool dropout,
                       const std::string& name) {
    validate(spec);
    check_node(input);
    if (nodes_[input].channels != spec.in_channels) {
      throw Error(ErrorCode::ShapeMismatch, "channel",
                  name + ": input node has " + std::to_string(nodes_[input].channels) +
                      " channels, conv expects " + std::to_string(spec.in_channels));
    }
    if (act == Activation::Sigmoid && dropout) {
      throw Error(ErrorCode::InvalidArgument, name, "dropout after a sigmoid head is not allowed");
    }
    Node n;
    n.kind = NodeKind::Conv;
    n.name = name;
    n.inputs = {input};
    n.channels = spec.out_channels;
    n.conv = spec;
    n.activation = act;
    n.dropout = dropout;
    n.weight = add_parameter(name + ".weight", spec.weight_shape());
    n.bias = add_parameter(name + ".bias", Shape5{spec.out_channels, 1, 1, 1, 1});
    init_he(params_[n.weight], spec.in_channels * spec.kernel.d * spec.kernel.h * spec.kernel.w,
            n.weight);
    return push(std::move(n));
  }

  std::size_t add_maxpool(std::size_t input, Extent3 window, Extent3 stride, Padding padding,
                          const std::string& name) {
    check_node(input);
    Node n;
    n.kind = NodeKind::MaxPool;
    n.name = name;
    n.inputs = {input};
    n.channels = nodes_[input].channels;
    n.window = window;
    n.stride = stride;
    n.padding = padding;
    return push(std::move(n));
  }

  std::size_t add_upsample(std::size_t input, std::size_t factor, const std::string& name) {
    check_node(input);
    Node n;
    n.kind = NodeKind::Upsample;
    n.name = name;
    n.inputs = {input};
    n.channels = nodes_[input].channels;
    n.factor = factor;
    return push(std::move(n));
  }

  std::size_t add_concat(std::vector<std::size_t> inputs, const std::string& name) {
    Node n;
    n.kind = NodeKind::Concat;
    n.name = name;
    for (auto i : inputs) {
      check_node(i);
      n.channels += nodes_[i].channels;
    }
    n.inputs = std::move(inputs);
    return push(std::move(n));
  }

  std::size_t output_node() const { return nodes_.size() - 1; }
  std::size_t output_channels() const { return nodes_.empty() ? 0 : nodes_.back().channels; }

  void zero_parameters() {
    for (auto& p : params_) p.value.fill(T(0));
  }

  template <class U>
  ModelGraph<U> cast() const {
    ModelGraph<U> out(cfg_);
    out.assign_structure(nodes_, divisor_);
    for (const auto& p : params_) out.parameters().push_back({p.name, p.value.template cast<U>()});
    return out;
  }

  // Used by cast(); replaces the node list wholesale.
  void assign_structure(std::vector<Node> nodes, std::size_t divisor) {
    nodes_ = std::move(nodes);
    divisor_ = divisor;
  }

 private:
  std::size_t push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  void check_node(std::size_t i) const {
    if (i >= nodes_.size()) {
      throw Error(ErrorCode::InvalidArgument, "node", "reference to a node not yet defined");
    }
  }

  std::size_t add_parameter(const std::string& name, const Shape5& shape) {
    if (find_parameter(name)) {
      throw Error(ErrorCode::InvalidArgument, name, "duplicate parameter name");
    }
    params_.push_back({name, Tensor5<T>(shape)});
    return params_.size() - 1;
  }

  void init_he(Parameter<T>& p, std::size_t fan_in, std::size_t index) {
    Rng rng(mix_seed(cfg_.init_seed, index));
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (T& v : p.value.values()) v = static_cast<T>(sd * rng.normal());
  }

  ModelCfg cfg_{};
  std::vector<Node> nodes_;
  std::vector<Parameter<T>> params_;
  std::size_t divisor_ = 1;
};

// ---------------------------------------------------------------------------
// Forward / backward

template <class T>
struct Trace {
  Mode mode = Mode::Infer;
  double dropout_rate = 0.0;
  std::vector<Tensor5<T>> outputs;
  std::vector<std::vector<std::uint8_t>> dropout_masks;
  std::vector<std::vector<std::uint32_t>> pool_indices;

  const Tensor5<T>& output() const { return outputs.back(); }
};

template <class T>
struct Gradients {
  std::vector<Tensor5<T>> params;  // aligned with ModelGraph::parameters()
  Tensor5<T> input;
};

namespace detail {

template <class T>
void check_model_input(const ModelGraph<T>& model, const Tensor5<T>& x) {
  if (model.nodes().empty()) throw Error(ErrorCode::InvalidArgument, "model", "empty graph");
  if (x.shape().c != model.nodes().front().channels) {
    throw Error(ErrorCode::ShapeMismatch, "channel",
                "model expects " + std::to_string(model.nodes().front().channels) +
                    " input channels, got " + std::to_string(x.shape().c));
  }
  const auto dims = dims_of(x.shape());
  for (std::size_t a = 2; a < 5; ++a) {
    if (dims[a] == 0 || dims[a] % model.divisor() != 0) {
      throw Error(ErrorCode::ShapeMismatch, kAxisNames[a],
                  "extent " + std::to_string(dims[a]) + " is not a positive multiple of " +
                      std::to_string(model.divisor()));
    }
  }
}

template <class T>
Tensor5<T> conv_node_forward(const ModelGraph<T>& model, const Node& node, std::size_t index,
                             const Tensor5<T>& in, Mode mode, std::uint64_t seed,
                             std::vector<std::uint8_t>* mask_out) {
  const auto& params = model.parameters();
  const auto& bias = params[node.bias].value;
  Tensor5<T> y = conv3d(in, params[node.weight].value, bias.values(), node.conv);
  switch (node.activation) {
    case Activation::Relu: y = relu(std::move(y)); break;
    case Activation::Sigmoid: y = sigmoid(std::move(y)); break;
    case Activation::None: break;
  }
  const double rate = model.cfg().dropout_rate;
  if (node.dropout && mode == Mode::Train && rate > 0.0) {
    auto r = dropout(std::move(y), rate, mix_seed(seed, index), mode);
    if (mask_out) *mask_out = std::move(r.mask);
    return std::move(r.output);
  }
  return y;
}

template <class T>
Trace<T> run_forward(const ModelGraph<T>& model, const Tensor5<T>& x, Mode mode,
                     std::uint64_t seed, bool keep_all) {
  check_model_input(model, x);
  const auto& nodes = model.nodes();
  Trace<T> trace;
  trace.mode = mode;
  trace.dropout_rate = model.cfg().dropout_rate;
  trace.outputs.resize(nodes.size());
  trace.dropout_masks.resize(nodes.size());
  trace.pool_indices.resize(nodes.size());

  std::vector<std::size_t> last_use(nodes.size(), 0);
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (auto in : nodes[i].inputs) last_use[in] = i;

  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Node& node = nodes[i];
    switch (node.kind) {
      case NodeKind::Input: trace.outputs[i] = x; break;
      case NodeKind::Conv:
        trace.outputs[i] =
            conv_node_forward(model, node, i, trace.outputs[node.inputs[0]], mode, seed,
                              keep_all ? &trace.dropout_masks[i] : nullptr);
        break;
      case NodeKind::MaxPool: {
        auto r = maxpool3d(trace.outputs[node.inputs[0]], node.window, node.stride, node.padding);
        trace.outputs[i] = std::move(r.output);
        if (keep_all) trace.pool_indices[i] = std::move(r.argmax);
        break;
      }
      case NodeKind::Upsample:
        trace.outputs[i] = upsample_nearest(trace.outputs[node.inputs[0]], node.factor);
        break;
      case NodeKind::Concat: {
        std::vector<const Tensor5<T>*> parts;
        for (auto in : node.inputs) parts.push_back(&trace.outputs[in]);
        trace.outputs[i] = concat_channels<T>(std::span<const Tensor5<T>* const>(parts));
        break;
      }
    }
    if (!keep_all) {
      for (auto in : node.inputs)
        if (last_use[in] == i) trace.outputs[in] = Tensor5<T>();
    }
  }
  return trace;
}

template <class T>
void accumulate(std::optional<Tensor5<T>>& slot, Tensor5<T>&& g) {
  if (slot) {
    *slot += g;
  } else {
    slot = std::move(g);
  }
}

}  // namespace detail

// Probability volume for x. Infer mode disables dropout; Train mode draws
// dropout masks from `seed` so the result is reproducible.
template <class T>
Tensor5<T> forward(const ModelGraph<T>& model, const Tensor5<T>& x, Mode mode = Mode::Infer,
                   std::uint64_t seed = 0) {
  auto trace = detail::run_forward(model, x, mode, seed, false);
  return std::move(trace.outputs.back());
}

// Forward pass that keeps every activation for a later backward().
template <class T>
Trace<T> forward_trace(const ModelGraph<T>& model, const Tensor5<T>& x, Mode mode,
                       std::uint64_t seed) {
  return detail::run_forward(model, x, mode, seed, true);
}

template <class T>
Gradients<T> backward(const ModelGraph<T>& model, const Trace<T>& trace,
                      const Tensor5<T>& grad_output) {
  const auto& nodes = model.nodes();
  const auto& params = model.parameters();
  if (trace.outputs.size() != nodes.size()) {
    throw Error(ErrorCode::InvalidArgument, "trace", "trace does not belong to this model");
  }
  require_same_shape(grad_output.shape(), trace.output().shape(), "backward grad_output");

  Gradients<T> grads;
  for (const auto& p : params) grads.params.emplace_back(p.value.shape());
  std::vector<std::optional<Tensor5<T>>> node_grads(nodes.size());
  node_grads.back() = grad_output;

  for (std::size_t i = nodes.size(); i-- > 0;) {
    if (!node_grads[i]) continue;
    Tensor5<T> g = std::move(*node_grads[i]);
    node_grads[i].reset();
    const Node& node = nodes[i];
    switch (node.kind) {
      case NodeKind::Input: grads.input = std::move(g); break;
      case NodeKind::Conv: {
        const Tensor5<T>& y = trace.outputs[i];
        if (!trace.dropout_masks[i].empty()) {
          g = dropout_backward(std::move(g), std::span<const std::uint8_t>(trace.dropout_masks[i]),
                               trace.dropout_rate);
        }
        if (node.activation == Activation::Relu) g = relu_backward(y, std::move(g));
        if (node.activation == Activation::Sigmoid) g = sigmoid_backward(y, std::move(g));
        const Tensor5<T>& in = trace.outputs[node.inputs[0]];
        auto cg = conv3d_backward(in, params[node.weight].value, g, node.conv);
        grads.params[node.weight] += cg.grad_w;
        auto& gb = grads.params[node.bias];
        for (std::size_t o = 0; o < cg.grad_b.size(); ++o) gb[o] += cg.grad_b[o];
        detail::accumulate(node_grads[node.inputs[0]], std::move(cg.grad_x));
        break;
      }
      case NodeKind::MaxPool:
        detail::accumulate(node_grads[node.inputs[0]],
                           maxpool3d_backward(g, std::span<const std::uint32_t>(
                                                     trace.pool_indices[i]),
                                              trace.outputs[node.inputs[0]].shape()));
        break;
      case NodeKind::Upsample:
        detail::accumulate(node_grads[node.inputs[0]], upsample_nearest_backward(g, node.factor));
        break;
      case NodeKind::Concat: {
        std::vector<std::size_t> counts;
        for (auto in : node.inputs) counts.push_back(trace.outputs[in].shape().c);
        auto parts = split_channels(g, std::span<const std::size_t>(counts));
        for (std::size_t k = 0; k < node.inputs.size(); ++k)
          detail::accumulate(node_grads[node.inputs[k]], std::move(parts[k]));
        break;
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Blocks

// Four parallel Same-padded branches: 1x1x1; 1x1x1 -> 5x5x5; 1x1x1 -> 7x7x7;
// 3x3x3 max-pool (stride 1) -> 1x1x1. Each branch emits branch_depth channels.
template <class T>
std::size_t add_deep_block(ModelGraph<T>& g, std::size_t input, const DeepBlockCfg& cfg,
                           const std::string& prefix) {
  const std::size_t in = cfg.in_channels, d = cfg.branch_depth;
  const auto a = g.add_conv(input, ConvSpec::cube(1, in, d), Activation::Relu, true,
                            prefix + ".b1");
  const auto b0 = g.add_conv(input, ConvSpec::cube(1, in, d), Activation::Relu, true,
                             prefix + ".b5_reduce");
  const auto b = g.add_conv(b0, ConvSpec::cube(5, d, d), Activation::Relu, true, prefix + ".b5");
  const auto c0 = g.add_conv(input, ConvSpec::cube(1, in, d), Activation::Relu, true,
                             prefix + ".b7_reduce");
  const auto c = g.add_conv(c0, ConvSpec::cube(7, d, d), Activation::Relu, true, prefix + ".b7");
  const auto p = g.add_maxpool(input, Extent3::cube(3), Extent3::cube(1), Padding::Same,
                               prefix + ".pool");
  const auto e = g.add_conv(p, ConvSpec::cube(1, in, d), Activation::Relu, true,
                            prefix + ".pool_proj");
  return g.add_concat({a, b, c, e}, prefix + ".concat");
}

// Three parallel branches that halve every extent: 2x2x2 max-pool; 3x3x3
// stride-2 conv; 1x1x1 -> 3x3x3 stride-2 conv.
template <class T>
std::size_t add_reduction_block(ModelGraph<T>& g, std::size_t input,
                                const ReductionBlockCfg& cfg, const std::string& prefix) {
  const std::size_t in = cfg.in_channels, d = cfg.branch_depth;
  const auto p = g.add_maxpool(input, Extent3::cube(2), Extent3::cube(2), Padding::Valid,
                               prefix + ".pool");
  const auto s = g.add_conv(input, ConvSpec::cube(3, in, d, 2), Activation::Relu, true,
                            prefix + ".s3");
  const auto r0 = g.add_conv(input, ConvSpec::cube(1, in, d), Activation::Relu, true,
                             prefix + ".s3_reduce");
  const auto r = g.add_conv(r0, ConvSpec::cube(3, d, d, 2), Activation::Relu, true,
                            prefix + ".s3b");
  return g.add_concat({p, s, r}, prefix + ".concat");
}

// Stand-alone graphs holding a single block; handy for testing the blocks in
// isolation.
template <class T>
ModelGraph<T> make_deep_block(const DeepBlockCfg& cfg, double dropout_rate,
                              std::uint64_t seed) {
  ModelGraph<T> g(ModelCfg{Arch::Custom, cfg.branch_depth, 0, dropout_rate, cfg.in_channels,
                           cfg.out_channels(), 0, seed});
  const auto in = g.add_input(cfg.in_channels);
  add_deep_block(g, in, cfg, "deep");
  return g;
}

template <class T>
ModelGraph<T> make_reduction_block(const ReductionBlockCfg& cfg, double dropout_rate,
                                   std::uint64_t seed) {
  ModelGraph<T> g(ModelCfg{Arch::Custom, cfg.branch_depth, 1, dropout_rate, cfg.in_channels,
                           cfg.out_channels(), 0, seed});
  const auto in = g.add_input(cfg.in_channels);
  add_reduction_block(g, in, cfg, "reduce");
  g.set_divisor(2);
  return g;
}

inline void validate(const ModelCfg& cfg) {
  if (cfg.levels < 1) throw Error(ErrorCode::Config, "levels", "levels must be at least 1");
  if (cfg.depth < 1) throw Error(ErrorCode::Config, "depth", "depth must be at least 1");
  if (!(cfg.dropout_rate >= 0.0 && cfg.dropout_rate < 1.0)) {
    throw Error(ErrorCode::Config, "dropout", "dropout rate must lie in [0, 1)");
  }
  if (cfg.input_channels < 1 || cfg.output_channels < 1) {
    throw Error(ErrorCode::Config, "channels", "channel counts must be positive");
  }
  if (cfg.levels > 16) throw Error(ErrorCode::Config, "levels", "too many levels");
}

// Encoder: stem 3x3x3 conv, then per level a Deep Block (kept for the skip)
// followed by a Reduction Block. Bottleneck Deep Block. Decoder: upsample,
// concat the skip, Deep Block. Head: 1x1x1 conv + sigmoid.
template <class T>
ModelGraph<T> build_uception(ModelCfg cfg) {
  cfg.arch = Arch::Uception;
  validate(cfg);
  ModelGraph<T> g(cfg);
  const std::size_t D = cfg.depth;
  auto x = g.add_input(cfg.input_channels);
  x = g.add_conv(x, ConvSpec::cube(3, cfg.input_channels, D), Activation::Relu, true, "stem");
  std::size_t channels = D;
  std::vector<std::pair<std::size_t, std::size_t>> skips;  // (node, channels)
  for (std::size_t level = 0; level < cfg.levels; ++level) {
    const std::size_t bd = D << level;
    const std::string p = "enc" + std::to_string(level);
    x = add_deep_block(g, x, {channels, bd}, p + ".deep");
    channels = 4 * bd;
    skips.emplace_back(x, channels);
    x = add_reduction_block(g, x, {channels, bd}, p + ".reduce");
    channels += 2 * bd;
  }
  x = add_deep_block(g, x, {channels, D << cfg.levels}, "bottleneck");
  channels = 4 * (D << cfg.levels);
  for (std::size_t level = cfg.levels; level-- > 0;) {
    const std::size_t bd = D << level;
    const std::string p = "dec" + std::to_string(level);
    const auto up = g.add_upsample(x, 2, p + ".up");
    x = g.add_concat({up, skips[level].first}, p + ".skip");
    channels += skips[level].second;
    x = add_deep_block(g, x, {channels, bd}, p + ".deep");
    channels = 4 * bd;
  }
  g.add_conv(x, ConvSpec::cube(1, channels, cfg.output_channels), Activation::Sigmoid, false,
             "head");
  g.set_divisor(std::size_t{1} << cfg.levels);
  return g;
}

// Parameter count of the plain U-net with level-0 width `width`, evaluated
// without building it.
inline std::size_t unet3d_parameter_count(std::size_t width, std::size_t levels,
                                          std::size_t in_channels, std::size_t out_channels) {
  auto conv = [](std::size_t k, std::size_t in, std::size_t out) { return k * k * k * in * out + out; };
  std::size_t total = 0, c = in_channels;
  for (std::size_t l = 0; l < levels; ++l) {
    const std::size_t w = width << l;
    total += conv(3, c, w) + conv(3, w, w);
    c = w;
  }
  const std::size_t wb = width << levels;
  total += conv(3, c, wb) + conv(3, wb, wb);
  c = wb;
  for (std::size_t l = levels; l-- > 0;) {
    const std::size_t w = width << l;
    total += conv(3, c + w, w) + conv(3, w, w);
    c = w;
  }
  return total + conv(1, c, out_channels);
}

template <class T>
ModelGraph<T> build_unet3d_core(const ModelCfg& cfg, std::size_t width) {
  ModelGraph<T> g(cfg);
  auto x = g.add_input(cfg.input_channels);
  std::size_t c = cfg.input_channels;
  std::vector<std::size_t> skips;
  for (std::size_t level = 0; level < cfg.levels; ++level) {
    const std::size_t w = width << level;
    const std::string p = "enc" + std::to_string(level);
    x = g.add_conv(x, ConvSpec::cube(3, c, w), Activation::Relu, true, p + ".conv1");
    x = g.add_conv(x, ConvSpec::cube(3, w, w), Activation::Relu, true, p + ".conv2");
    skips.push_back(x);
    x = g.add_maxpool(x, Extent3::cube(2), Extent3::cube(2), Padding::Valid, p + ".pool");
    c = w;
  }
  const std::size_t wb = width << cfg.levels;
  x = g.add_conv(x, ConvSpec::cube(3, c, wb), Activation::Relu, true, "bottleneck.conv1");
  x = g.add_conv(x, ConvSpec::cube(3, wb, wb), Activation::Relu, true, "bottleneck.conv2");
  c = wb;
  for (std::size_t level = cfg.levels; level-- > 0;) {
    const std::size_t w = width << level;
    const std::string p = "dec" + std::to_string(level);
    const auto up = g.add_upsample(x, 2, p + ".up");
    x = g.add_concat({up, skips[level]}, p + ".skip");
    x = g.add_conv(x, ConvSpec::cube(3, c + w, w), Activation::Relu, true, p + ".conv1");
    x = g.add_conv(x, ConvSpec::cube(3, w, w), Activation::Relu, true, p + ".conv2");
    c = w;
  }
  g.add_conv(x, ConvSpec::cube(1, c, cfg.output_channels), Activation::Sigmoid, false, "head");
  g.set_divisor(std::size_t{1} << cfg.levels);
  return g;
}

// Width whose U-net parameter count is closest to the Uception built from the
// same cfg.
inline std::size_t matched_unet_width(const ModelCfg& cfg) {
  const std::size_t target = build_uception<float>(cfg).parameter_count();
  std::size_t best = 1;
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  for (std::size_t w = 1; w < 4096; ++w) {
    const std::size_t n =
        unet3d_parameter_count(w, cfg.levels, cfg.input_channels, cfg.output_channels);
    const std::size_t gap = n > target ? n - target : target - n;
    if (gap < best_gap) {
      best_gap = gap;
      best = w;
    }
    if (n > target) break;
  }
  return best;
}

// Two 3x3x3 conv+ReLU per level, 2x2x2 max-pool down, nearest upsample +
// concat up, 1x1x1 sigmoid head.
template <class T>
ModelGraph<T> build_unet3d_baseline(ModelCfg cfg) {
  cfg.arch = Arch::UNet3d;
  validate(cfg);
  if (cfg.unet_width == 0) cfg.unet_width = matched_unet_width(cfg);
  return build_unet3d_core<T>(cfg, cfg.unet_width);
}

// Rebuilds the graph a checkpointed cfg describes.
template <class T>
ModelGraph<T> build_model(const ModelCfg& cfg) {
  switch (cfg.arch) {
    case Arch::Uception: return build_uception<T>(cfg);
    case Arch::UNet3d: return build_unet3d_baseline<T>(cfg);
    case Arch::Custom: break;
  }
  throw Error(ErrorCode::InvalidArgument, "arch", "custom graphs cannot be rebuilt from a cfg");
}

}  // namespace uception
