#pragma once

// 64-bit central finite-difference checks for every layer, both blocks, two
// miniature networks and the soft Dice gradient.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "uception/layers.hpp"
#include "uception/metrics.hpp"
#include "uception/model.hpp"
#include "uception/rng.hpp"

namespace uception {

struct GradcheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // entries sitting on a ReLU/max kink
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  bool passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
  }
};

struct GradcheckOptions {
  std::uint64_t seed = 1;
  double step = 1e-6;
  // Applied to each analytic gradient before comparison; lets tests verify
  // that a broken backward pass is caught and attributed correctly.
  std::function<void(std::string_view check, std::vector<double>& analytic)> fault;
  std::function<void(const GradcheckEntry&)> on_entry;  // progress callback
};

namespace detail {

struct FdTarget {
  double* value;
  double analytic;
};

class GradChecker {
 public:
  explicit GradChecker(const GradcheckOptions& opt) : opt_(opt) {}

  // Compares analytic gradients against central differences of `loss` for
  // every target.
  void check(const std::string& name, double tol, std::vector<FdTarget> targets,
             const std::function<double()>& loss) {
    std::vector<double> analytic;
    for (const auto& t : targets) analytic.push_back(t.analytic);
    if (opt_.fault) opt_.fault(name, analytic);

    GradcheckEntry e;
    e.name = name;
    e.tolerance = tol;
    double diff = 0.0, scale = 1e-12;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      double numeric;
      if (!numeric_derivative(*targets[i].value, loss, numeric)) {
        ++e.skipped;
        continue;
      }
      ++e.checked;
      diff = std::max(diff, std::abs(numeric - analytic[i]));
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[i])});
    }
    e.max_rel_error = diff / scale;
    // At most a handful of kinked entries may be skipped.
    e.passed = e.max_rel_error <= tol && e.checked > 0 && e.skipped * 20 <= targets.size();
    report_.entries.push_back(e);
    if (opt_.on_entry) opt_.on_entry(e);
  }

  GradcheckReport take() { return std::move(report_); }

 private:
  // Central difference; a kink shows up as disagreeing one-sided slopes, in
  // which case the step shrinks and, failing that, the entry is skipped.
  bool numeric_derivative(double& x, const std::function<double()>& loss, double& out) const {
    const double saved = x;
    const double base = loss();
    for (double h = opt_.step; h >= opt_.step * 1e-2; h *= 0.1) {
      x = saved + h;
      const double up = loss();
      x = saved - h;
      const double down = loss();
      x = saved;
      const double fwd = (up - base) / h, bwd = (base - down) / h;
      const double tol = 1e-5 * std::max({1.0, std::abs(fwd), std::abs(bwd)});
      if (std::abs(fwd - bwd) <= tol) {
        out = (up - down) / (2.0 * h);
        return true;
      }
    }
    return false;
  }

  const GradcheckOptions& opt_;
  GradcheckReport report_;
};

inline Tensor5<double> random_like(Shape5 s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor5<double> t(s);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

inline double weighted_sum(const Tensor5<double>& y, const Tensor5<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
  return s;
}

inline void add_targets(std::vector<FdTarget>& out, Tensor5<double>& x, const Tensor5<double>& g,
                        std::size_t max_entries = 0) {
  const std::size_t n = x.size();
  const std::size_t stride = max_entries && n > max_entries ? (n + max_entries - 1) / max_entries : 1;
  for (std::size_t i = 0; i < n; i += stride) out.push_back({&x[i], g[i]});
}

// Loss sum(R * model(x)) and its gradient, for blocks and whole networks.
inline void check_graph(GradChecker& gc, const std::string& name, double tol,
                        ModelGraph<double>& model, Shape5 input, Rng& rng,
                        std::size_t per_param) {
  Tensor5<double> x = random_like(input, rng);
  const std::uint64_t dseed = rng.next();
  const auto trace = forward_trace(model, x, Mode::Train, dseed);
  const Tensor5<double> r = random_like(trace.output().shape(), rng);
  const auto grads = backward(model, trace, r);

  std::vector<FdTarget> targets;
  add_targets(targets, x, grads.input, 64);
  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    add_targets(targets, params[i].value, grads.params[i], per_param);
  gc.check(name, tol, std::move(targets), [&] {
    return weighted_sum(forward(model, x, Mode::Train, dseed), r);
  });
}

}  // namespace detail

inline GradcheckReport run_gradcheck(const GradcheckOptions& opt = {}) {
  using detail::FdTarget;
  using detail::random_like;
  using detail::weighted_sum;
  detail::GradChecker gc(opt);
  Rng rng(mix_seed(opt.seed, 0));
  constexpr double tol = 1e-4;

  // Convolutions: every input, weight and bias entry.
  struct ConvCase {
    const char* name;
    std::size_t k, stride;
    Padding pad;
  };
  for (const auto& cc : {ConvCase{"conv3d_k1", 1, 1, Padding::Same},
                         ConvCase{"conv3d_k3", 3, 1, Padding::Same},
                         ConvCase{"conv3d_k3_valid", 3, 1, Padding::Valid},
                         ConvCase{"conv3d_k3_stride2", 3, 2, Padding::Same},
                         ConvCase{"conv3d_k5", 5, 1, Padding::Same},
                         ConvCase{"conv3d_k7", 7, 1, Padding::Same}}) {
    const ConvSpec spec = ConvSpec::cube(cc.k, 2, 3, cc.stride, cc.pad);
    Tensor5<double> x = random_like({1, 2, 5, 5, 5}, rng);
    Tensor5<double> w = random_like(spec.weight_shape(), rng);
    Tensor5<double> b = random_like({3, 1, 1, 1, 1}, rng);
    const Tensor5<double> r = random_like(conv3d(x, w, std::as_const(b).values(), spec).shape(), rng);
    const auto g = conv3d_backward(x, w, r, spec);
    Tensor5<double> gb({3, 1, 1, 1, 1}, g.grad_b);
    std::vector<FdTarget> t;
    detail::add_targets(t, x, g.grad_x);
    detail::add_targets(t, w, g.grad_w);
    detail::add_targets(t, b, gb);
    gc.check(cc.name, tol, std::move(t), [&] { return weighted_sum(conv3d(x, w, std::as_const(b).values(), spec), r); });
  }

  {
    Tensor5<double> x = random_like({1, 2, 4, 6, 4}, rng);
    auto fwd = maxpool3d(x);
    const Tensor5<double> r = random_like(fwd.output.shape(), rng);
    const auto g = maxpool3d_backward(r, std::span<const std::uint32_t>(fwd.argmax), x.shape());
    std::vector<FdTarget> t;
    detail::add_targets(t, x, g);
    gc.check("maxpool3d", tol, std::move(t), [&] { return weighted_sum(maxpool3d(x).output, r); });
  }
  {
    Tensor5<double> x = random_like({1, 2, 5, 4, 3}, rng);
    auto pool = [&] { return maxpool3d(x, Extent3::cube(3), Extent3::cube(1), Padding::Same); };
    auto fwd = pool();
    const Tensor5<double> r = random_like(fwd.output.shape(), rng);
    const auto g = maxpool3d_backward(r, std::span<const std::uint32_t>(fwd.argmax), x.shape());
    std::vector<FdTarget> t;
    detail::add_targets(t, x, g);
    gc.check("maxpool3d_same", tol, std::move(t), [&] { return weighted_sum(pool().output, r); });
  }
  {
    Tensor5<double> x = random_like({1, 2, 3, 2, 3}, rng);
    const Tensor5<double> r = random_like(upsample_nearest(x).shape(), rng);
    std::vector<FdTarget> t;
    detail::add_targets(t, x, upsample_nearest_backward(r));
    gc.check("upsample_nearest", tol, std::move(t), [&] { return weighted_sum(upsample_nearest(x), r); });
  }
  {
    Tensor5<double> a = random_like({1, 2, 3, 3, 3}, rng), b = random_like({1, 3, 3, 3, 3}, rng);
    auto cat = [&] {
      const Tensor5<double>* parts[] = {&a, &b};
      return concat_channels<double>(std::span<const Tensor5<double>* const>(parts));
    };
    const Tensor5<double> r = random_like(cat().shape(), rng);
    const std::size_t counts[] = {2, 3};
    auto g = split_channels(r, std::span<const std::size_t>(counts));
    std::vector<FdTarget> t;
    detail::add_targets(t, a, g[0]);
    detail::add_targets(t, b, g[1]);
    gc.check("concat_channels", tol, std::move(t), [&] { return weighted_sum(cat(), r); });
  }
  {
    Tensor5<double> x = random_like({1, 2, 4, 4, 4}, rng);
    for (double& v : x.values()) v += v >= 0 ? 0.05 : -0.05;  // keep clear of the kink
    const Tensor5<double> r = random_like(x.shape(), rng);
    std::vector<FdTarget> t;
    detail::add_targets(t, x, relu_backward(x, r));
    gc.check("relu", tol, std::move(t), [&] { return weighted_sum(relu(x), r); });
  }
  {
    Tensor5<double> x = random_like({1, 2, 4, 4, 4}, rng, -4.0, 4.0);
    const Tensor5<double> r = random_like(x.shape(), rng);
    std::vector<FdTarget> t;
    detail::add_targets(t, x, sigmoid_backward(sigmoid(x), r));
    gc.check("sigmoid", tol, std::move(t), [&] { return weighted_sum(sigmoid(x), r); });
  }
  {
    Tensor5<double> x = random_like({1, 2, 4, 4, 4}, rng);
    const std::uint64_t seed = rng.next();
    const Tensor5<double> r = random_like(x.shape(), rng);
    const auto fwd = dropout(x, 0.3, seed);
    std::vector<FdTarget> t;
    detail::add_targets(t, x, dropout_backward(r, std::span<const std::uint8_t>(fwd.mask), 0.3));
    gc.check("dropout", tol, std::move(t), [&] { return weighted_sum(dropout(x, 0.3, seed).output, r); });
  }
  for (double smooth : {0.0, 1.0}) {
    Tensor5<double> p = random_like({2, 1, 3, 3, 3}, rng, 0.02, 0.98);
    Tensor5<double> tr(Shape5{2, 1, 3, 3, 3});
    for (double& v : tr.values()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    std::vector<FdTarget> t;
    detail::add_targets(t, p, soft_dice_backward(p, tr, smooth));
    gc.check(smooth == 0.0 ? "soft_dice" : "soft_dice_smooth1", 1e-5, std::move(t),
             [&] { return soft_dice(p, tr, smooth); });
  }

  {
    auto block = make_deep_block<double>({2, 2}, 0.25, rng.next());
    detail::check_graph(gc, "deep_block", tol, block, {1, 2, 6, 6, 6}, rng, 24);
  }
  {
    auto block = make_reduction_block<double>({3, 2}, 0.25, rng.next());
    detail::check_graph(gc, "reduction_block", tol, block, {1, 3, 6, 6, 6}, rng, 24);
  }
  {
    ModelCfg cfg;
    cfg.depth = 2;
    cfg.levels = 1;
    cfg.init_seed = rng.next();
    auto net = build_uception<double>(cfg);
    detail::check_graph(gc, "uception_d2_l1", 1e-3, net, {1, 1, 8, 8, 8}, rng, 12);
  }
  {
    ModelCfg cfg;
    cfg.depth = 2;
    cfg.levels = 1;
    cfg.init_seed = rng.next();
    auto net = build_unet3d_baseline<double>(cfg);
    detail::check_graph(gc, "unet3d_l1", 1e-3, net, {1, 1, 8, 8, 8}, rng, 12);
  }
  return gc.take();
}

}  // namespace uception
