#pragma once

// Adam, the cosine-with-restarts learning-rate schedule, and the snapshot set
// that keeps weights from validation-loss local minima for averaging.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <vector>

#include "uception/error.hpp"
#include "uception/model.hpp"
#include "uception/tensor.hpp"

namespace uception {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::vector<Tensor5<T>> m, v;  // aligned with the model's parameters
};

template <class T>
AdamState<T> make_adam_state(const std::vector<Parameter<T>>& params, AdamHyper hyper = {}) {
  AdamState<T> s;
  s.hyper = hyper;
  for (const auto& p : params) {
    s.m.emplace_back(p.value.shape());
    s.v.emplace_back(p.value.shape());
  }
  return s;
}

// One bias-corrected Adam update at state.hyper.lr. Everything is validated
// before the first parameter is touched, so a failed call changes nothing.
template <class T>
void adam_step(std::vector<Parameter<T>>& params, const std::vector<Tensor5<T>>& grads,
               AdamState<T>& state) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "parameters",
                "parameter, gradient and moment lists differ in length");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& name = params[i].name;
    const Shape5 s = params[i].value.shape();
    if (grads[i].shape() != s || state.m[i].shape() != s || state.v[i].shape() != s) {
      throw Error(ErrorCode::ShapeMismatch, name, "gradient or moment shape differs from parameter");
    }
    if (!grads[i].all_finite()) {
      throw Error(ErrorCode::NonFinite, name, "non-finite gradient");
    }
  }

  const auto& h = state.hyper;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(h.beta1, t);
  const double c2 = 1.0 - std::pow(h.beta2, t);
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T ob1 = static_cast<T>(1.0 - h.beta1), ob2 = static_cast<T>(1.0 - h.beta2);
  const T step_size = static_cast<T>(h.lr / c1);
  const T inv_sqrt_c2 = static_cast<T>(1.0 / std::sqrt(c2));
  const T eps = static_cast<T>(h.eps);

  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i].value.data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const T* g = grads[i].data();
    for (std::size_t k = 0; k < params[i].value.size(); ++k) {
      m[k] = b1 * m[k] + ob1 * g[k];
      v[k] = b2 * v[k] + ob2 * g[k] * g[k];
      p[k] -= step_size * m[k] / (std::sqrt(v[k]) * inv_sqrt_c2 + eps);
    }
  }
}

// ---------------------------------------------------------------------------

struct CyclicSchedule {
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  std::size_t cycle_length_epochs = 20;
  std::size_t epochs_elapsed = 0;
};

inline double cyclic_lr(const CyclicSchedule& s, std::size_t epoch) {
  if (s.cycle_length_epochs == 0) {
    throw Error(ErrorCode::InvalidArgument, "cycle_epochs", "cycle length must be positive");
  }
  const double frac = static_cast<double>(epoch % s.cycle_length_epochs) /
                      static_cast<double>(s.cycle_length_epochs);
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

inline double cyclic_lr(const CyclicSchedule& s) { return cyclic_lr(s, s.epochs_elapsed); }

// ---------------------------------------------------------------------------

template <class T>
struct Snapshot {
  std::size_t epoch = 0;
  double val_loss = 0.0;
  std::vector<Tensor5<T>> params;
};

// Epoch e is a local minimum when its loss is below both neighbours. A
// candidate is only judged once its successor arrives, so the set trails the
// training loop by one epoch; the first epoch has no left neighbour (treated
// as +inf) and the last is judged by snapshot_finalize.
template <class T>
struct SnapshotSet {
  std::size_t capacity = 5;
  std::vector<Snapshot<T>> entries;  // ascending val_loss, ties by epoch

  std::optional<Snapshot<T>> pending;  // most recent epoch, not yet judged
  std::optional<double> before_pending;
};

namespace detail {

template <class T>
void snapshot_insert(SnapshotSet<T>& set, Snapshot<T> snap) {
  auto pos = std::find_if(set.entries.begin(), set.entries.end(), [&](const Snapshot<T>& e) {
    return std::pair{snap.val_loss, snap.epoch} < std::pair{e.val_loss, e.epoch};
  });
  set.entries.insert(pos, std::move(snap));
  if (set.entries.size() > set.capacity) set.entries.resize(set.capacity);
}

inline bool below_left(double loss, const std::optional<double>& left) {
  return !left || loss < *left;
}

}  // namespace detail

// Records epoch `epoch`; returns the epoch captured by this call, if any (the
// previous one, once it is known to be a local minimum).
template <class T>
std::optional<std::size_t> snapshot_update(SnapshotSet<T>& set, std::size_t epoch,
                                           double val_loss, std::vector<Tensor5<T>> params) {
  if (set.capacity == 0) {
    throw Error(ErrorCode::InvalidArgument, "snapshots", "snapshot capacity must be positive");
  }
  std::optional<std::size_t> captured;
  std::optional<double> left;
  if (set.pending) {
    const double l = set.pending->val_loss;
    left = l;
    if (detail::below_left(l, set.before_pending) && l < val_loss) {
      captured = set.pending->epoch;
      detail::snapshot_insert(set, std::move(*set.pending));
    }
  }
  set.before_pending = left;
  set.pending = Snapshot<T>{epoch, val_loss, std::move(params)};
  return captured;
}

// Judges the final epoch (no right neighbour) and, if nothing has been kept
// at all, keeps it regardless.
template <class T>
std::optional<std::size_t> snapshot_finalize(SnapshotSet<T>& set) {
  if (!set.pending) return std::nullopt;
  std::optional<std::size_t> captured;
  if (detail::below_left(set.pending->val_loss, set.before_pending) || set.entries.empty()) {
    captured = set.pending->epoch;
    detail::snapshot_insert(set, std::move(*set.pending));
  }
  set.pending.reset();
  set.before_pending.reset();
  return captured;
}

template <class T>
std::vector<Tensor5<T>> snapshot_average(const SnapshotSet<T>& set) {
  if (set.entries.empty()) {
    throw Error(ErrorCode::EmptyInput, "snapshots", "cannot average an empty snapshot set");
  }
  const auto& first = set.entries.front().params;
  std::vector<Tensor5<T>> avg;
  for (std::size_t i = 0; i < first.size(); ++i) {
    // Running mean: identical members reproduce themselves bit for bit.
    Tensor5<T> mean(first[i].shape());
    std::size_t k = 0;
    for (const auto& e : set.entries) {
      if (e.params.size() != first.size()) {
        throw Error(ErrorCode::ShapeMismatch, "snapshots", "snapshots differ in parameter count");
      }
      require_same_shape(e.params[i].shape(), mean.shape(), "snapshot average");
      ++k;
      const T* x = e.params[i].data();
      T* m = mean.data();
      for (std::size_t j = 0; j < mean.size(); ++j) m[j] += (x[j] - m[j]) / static_cast<T>(k);
    }
    avg.push_back(std::move(mean));
  }
  return avg;
}

template <class T>
std::vector<Tensor5<T>> parameter_values(const ModelGraph<T>& model) {
  std::vector<Tensor5<T>> out;
  for (const auto& p : model.parameters()) out.push_back(p.value);
  return out;
}

template <class T>
void set_parameter_values(ModelGraph<T>& model, const std::vector<Tensor5<T>>& values) {
  auto& params = model.parameters();
  if (values.size() != params.size()) {
    throw Error(ErrorCode::ShapeMismatch, "parameters", "parameter count differs");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(values[i].shape(), params[i].value.shape(), params[i].name);
    params[i].value = values[i];
  }
}

}  // namespace uception
