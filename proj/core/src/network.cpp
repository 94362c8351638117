// SPDX-License-Identifier: Apache-2.0

#include "rblr/network.hpp"

#include <string>
#include <utility>

namespace rblr {

namespace {

// Move-only holder that reports its lifetime to a StateMonitor.
class Tracked {
 public:
  Tracked() = default;
  Tracked(Tensor5D t, StateMonitor* mon) : t_(std::move(t)), mon_(mon), held_(true) {
    if (mon_) mon_->acquire();
  }
  Tracked(const Tracked&) = delete;
  Tracked& operator=(const Tracked&) = delete;
  Tracked(Tracked&& o) noexcept : t_(std::move(o.t_)), mon_(o.mon_), held_(std::exchange(o.held_, false)) {}
  Tracked& operator=(Tracked&& o) noexcept {
    if (this != &o) {
      reset();
      t_ = std::move(o.t_);
      mon_ = o.mon_;
      held_ = std::exchange(o.held_, false);
    }
    return *this;
  }
  ~Tracked() { reset(); }

  void reset() {
    if (held_ && mon_) mon_->release();
    held_ = false;
    t_ = Tensor5D();
  }
  /// Hands the tensor out and stops counting it.
  Tensor5D take() {
    Tensor5D out = std::move(t_);
    reset();
    return out;
  }

  Tensor5D& operator*() { return t_; }
  const Tensor5D& operator*() const { return t_; }
  Tensor5D* operator->() { return &t_; }
  const Tensor5D* operator->() const { return &t_; }

 private:
  Tensor5D t_;
  StateMonitor* mon_ = nullptr;
  bool held_ = false;
};

struct TrackedPair {
  Tracked prev;
  Tracked curr;
};

// W applied to a tracked state; the source is released as soon as the
// result exists.
Tracked transform(ResolutionChange r, Tracked src, StateMonitor* mon) {
  if (r == ResolutionChange::Identity) return src;
  Tracked out(apply_resolution(r, *src), mon);
  src.reset();
  return out;
}

Tracked untransform(ResolutionChange r, Tracked src, StateMonitor* mon) {
  if (r == ResolutionChange::Identity) return src;
  Tracked out(invert_resolution(r, *src), mon);
  src.reset();
  return out;
}

void advance(const LayerSpec& layer, const KernelStack& ks, double h, Activation f, TrackedPair& pair,
             StateMonitor* mon) {
  Tracked a = transform(layer.resolution, std::move(pair.curr), mon);
  Tracked b = transform(layer.resolution, std::move(pair.prev), mon);
  if (a->channels() != ks.cols()) {
    throw ShapeError("layer expects " + std::to_string(ks.cols()) + " channels, state has " +
                     a->shape().str());
  }
  Tracked force(layer_apply(ks, f, *a), mon);
  const double h2 = h * h;
  auto as = a->data();
  auto bs = b->data();
  auto fs = force->data();
  for (std::size_t i = 0; i < bs.size(); ++i) bs[i] = 2.0 * as[i] - bs[i] + h2 * fs[i];
  force.reset();
  pair.prev = std::move(a);
  pair.curr = std::move(b);
}

// In-place on `after`: returns the pair before the layer given the layer
// output value L(a) = -K^T f(K a + b).
void retreat(const LayerSpec& layer, double h, Tracked force, TrackedPair& pair, StateMonitor* mon) {
  const double h2 = h * h;
  {
    auto as = pair.prev->data();
    auto cs = pair.curr->data();
    auto fs = force->data();
    for (std::size_t i = 0; i < cs.size(); ++i) cs[i] = 2.0 * as[i] + h2 * fs[i] - cs[i];
  }
  force.reset();
  Tracked p = untransform(layer.resolution, std::move(pair.curr), mon);
  Tracked u = untransform(layer.resolution, std::move(pair.prev), mon);
  pair.prev = std::move(p);
  pair.curr = std::move(u);
}

TrackedPair run_forward(const NetworkSpec& spec, const NetworkParams& params, const Tensor5D& x,
                        StateMonitor* mon) {
  if (x.shape() != spec.input_shape) {
    throw ShapeError("input shape " + x.shape().str() + " does not match network input " +
                     spec.input_shape.str());
  }
  check_params(spec, params);
  TrackedPair pair{Tracked(x, mon), Tracked(x, mon)};
  for (std::size_t j = 0; j < spec.layers.size(); ++j) {
    advance(spec.layers[j], params[j], spec.h, spec.activation, pair, mon);
  }
  return pair;
}

StackGradient scaled(const LayerGradient& lg, double s) {
  StackGradient g{lg.grad_kernels, lg.grad_bias};
  for (double& v : g.kernels) v *= s;
  for (double& v : g.bias) v *= s;
  return g;
}

// Adjoint of one layer given the state a = W curr before the step and the
// incoming adjoints of (a, next). Returns the layer output value L(a).
Tensor5D adjoint_step(const LayerSpec& layer, const KernelStack& ks, double h, Activation f, const Tensor5D& a,
                      TrackedPair& adj, StackGradient& out, StateMonitor* adj_mon) {
  const double h2 = h * h;
  LayerGradient lg = layer_apply_and_vjp(ks, f, a, *adj.curr);
  Tracked gy(std::move(lg.grad_y), adj_mon);
  out = scaled(lg, h2);

  // abar <- abar + 2 cbar + h^2 J^T cbar
  {
    auto ab = adj.prev->data();
    auto cb = adj.curr->data();
    auto gs = gy->data();
    for (std::size_t i = 0; i < ab.size(); ++i) ab[i] += 2.0 * cb[i] + h2 * gs[i];
  }
  gy.reset();
  // W is orthogonal, so W^T = W^-1.
  Tracked ubar = untransform(layer.resolution, std::move(adj.prev), adj_mon);
  for (double& v : adj.curr->data()) v = -v;
  Tracked pbar = untransform(layer.resolution, std::move(adj.curr), adj_mon);
  adj.prev = std::move(pbar);
  adj.curr = std::move(ubar);
  return std::move(lg.value);
}

TrackedPair seed_adjoint(const TrackedPair& pair, const LossValue& lv, StateMonitor* adj_mon) {
  require_same_shape(*pair.curr, lv.grad, "loss gradient");
  return TrackedPair{Tracked(Tensor5D(pair.prev->shape()), adj_mon), Tracked(lv.grad, adj_mon)};
}

}  // namespace

std::vector<Shape> NetworkSpec::state_shapes() const {
  std::vector<Shape> shapes{input_shape};
  Shape s = input_shape;
  for (const auto& l : layers) {
    s = resolution_output_shape(l.resolution, s);
    shapes.push_back(s);
  }
  return shapes;
}

void NetworkSpec::validate() const {
  if (!input_shape.valid()) throw ShapeError("network input shape must be positive, got " + input_shape.str());
  if (!(h > 0.0)) throw ShapeError("time step h must be positive");
  Shape s = input_shape;
  for (std::size_t j = 0; j < layers.size(); ++j) {
    const auto& l = layers[j];
    try {
      s = resolution_output_shape(l.resolution, s);
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(j + 1) + ": " + e.what());
    }
    if (l.n != s.nchan) {
      throw ShapeError("layer " + std::to_string(j + 1) + ": n = " + std::to_string(l.n) + " but " +
                       std::to_string(s.nchan) + " channels arrive after " + std::string(to_string(l.resolution)));
    }
    if (l.m < 1) throw ShapeError("layer " + std::to_string(j + 1) + ": m must be >= 1");
  }
}

void check_params(const NetworkSpec& spec, const NetworkParams& params) {
  if (params.size() != spec.layers.size()) {
    throw ShapeError("network has " + std::to_string(spec.layers.size()) + " layers but " +
                     std::to_string(params.size()) + " kernel stacks were given");
  }
  for (std::size_t j = 0; j < params.size(); ++j) {
    if (params[j].rows() != spec.layers[j].m || params[j].cols() != spec.layers[j].n) {
      throw ShapeError("layer " + std::to_string(j + 1) + ": stack is " + std::to_string(params[j].rows()) + "x" +
                       std::to_string(params[j].cols()) + ", spec says " + std::to_string(spec.layers[j].m) + "x" +
                       std::to_string(spec.layers[j].n));
    }
  }
}

Tensor5D forward_step(const LayerSpec& layer, const KernelStack& ks, double h, const Tensor5D& y_prev,
                      const Tensor5D& y_curr, Activation f) {
  require_same_shape(y_prev, y_curr, "forward_step");
  TrackedPair pair{Tracked(y_prev, nullptr), Tracked(y_curr, nullptr)};
  advance(layer, ks, h, f, pair, nullptr);
  return pair.curr.take();
}

ForwardResult forward(const NetworkSpec& spec, const NetworkParams& params, const Tensor5D& x,
                      StateMonitor* monitor) {
  TrackedPair pair = run_forward(spec, params, x, monitor);
  ForwardResult r;
  r.output = *pair.curr;
  r.final_states = LeapfrogPair{pair.prev.take(), pair.curr.take()};
  return r;
}

LeapfrogPair reverse_step(const LayerSpec& layer, const KernelStack& ks, double h, const LeapfrogPair& after,
                          Activation f) {
  require_same_shape(after.prev, after.curr, "reverse_step");
  TrackedPair pair{Tracked(after.prev, nullptr), Tracked(after.curr, nullptr)};
  Tracked force(layer_apply(ks, f, *pair.prev), nullptr);
  retreat(layer, h, std::move(force), pair, nullptr);
  return LeapfrogPair{pair.prev.take(), pair.curr.take()};
}

LeapfrogPair reverse_reconstruct(const NetworkSpec& spec, const NetworkParams& params, std::size_t layer_index,
                                 const LeapfrogPair& after) {
  if (layer_index >= spec.layers.size()) throw std::out_of_range("reverse_reconstruct: layer index out of range");
  return reverse_step(spec.layers[layer_index], params[layer_index], spec.h, after, spec.activation);
}

std::vector<LeapfrogPair> forward_all_states(const NetworkSpec& spec, const NetworkParams& params,
                                             const Tensor5D& x) {
  if (x.shape() != spec.input_shape) {
    throw ShapeError("input shape " + x.shape().str() + " does not match network input " +
                     spec.input_shape.str());
  }
  check_params(spec, params);
  TrackedPair pair{Tracked(x, nullptr), Tracked(x, nullptr)};
  std::vector<LeapfrogPair> states;
  states.push_back({*pair.prev, *pair.curr});
  for (std::size_t j = 0; j < spec.layers.size(); ++j) {
    advance(spec.layers[j], params[j], spec.h, spec.activation, pair, nullptr);
    states.push_back({*pair.prev, *pair.curr});
  }
  return states;
}

std::vector<LeapfrogPair> reconstruct_all_states(const NetworkSpec& spec, const NetworkParams& params,
                                                 const LeapfrogPair& final_states) {
  check_params(spec, params);
  std::vector<LeapfrogPair> states(spec.layers.size() + 1);
  states.back() = final_states;
  for (std::size_t j = spec.layers.size(); j-- > 0;) {
    states[j] = reverse_reconstruct(spec, params, j, states[j + 1]);
  }
  return states;
}

NetworkGradient gradient(const NetworkSpec& spec, const NetworkParams& params, const Tensor5D& x,
                         const LossFn& loss_fn, MemoryProbe* probe) {
  StateMonitor* st_mon = probe ? &probe->states : nullptr;
  StateMonitor* adj_mon = probe ? &probe->adjoints : nullptr;

  TrackedPair pair = run_forward(spec, params, x, st_mon);
  const LossValue lv = loss_fn(*pair.curr);
  TrackedPair adj = seed_adjoint(pair, lv, adj_mon);

  NetworkGradient g;
  g.loss = lv.loss;
  g.layers.resize(spec.layers.size());
  for (std::size_t j = spec.layers.size(); j-- > 0;) {
    const auto& layer = spec.layers[j];
    Tensor5D value = adjoint_step(layer, params[j], spec.h, spec.activation, *pair.prev, adj, g.layers[j], adj_mon);
    retreat(layer, spec.h, Tracked(std::move(value), st_mon), pair, st_mon);
  }
  g.grad_input = add(*adj.prev, *adj.curr);
  return g;
}

NetworkGradient gradient_stored(const NetworkSpec& spec, const NetworkParams& params, const Tensor5D& x,
                                const LossFn& loss_fn) {
  const std::vector<LeapfrogPair> states = forward_all_states(spec, params, x);
  const LossValue lv = loss_fn(states.back().curr);

  TrackedPair adj{Tracked(Tensor5D(states.back().prev.shape()), nullptr), Tracked(lv.grad, nullptr)};
  require_same_shape(states.back().curr, lv.grad, "loss gradient");
  NetworkGradient g;
  g.loss = lv.loss;
  g.layers.resize(spec.layers.size());
  for (std::size_t j = spec.layers.size(); j-- > 0;) {
    adjoint_step(spec.layers[j], params[j], spec.h, spec.activation, states[j + 1].prev, adj, g.layers[j], nullptr);
  }
  g.grad_input = add(*adj.prev, *adj.curr);
  return g;
}

}  // namespace rblr
