// SPDX-License-Identifier: Apache-2.0
//
// Fully reversible leapfrog network built from symmetric BLR layers.
//
// The propagation state is a pair (prev, curr) on a common grid. Layer j
// with resolution change W and kernel stack K advances it as
//
//   a    = W curr
//   next = 2 a - W prev - h^2 K^T f(K a + b)
//   (prev, curr) <- (a, next)
//
// and the step is undone exactly by
//
//   curr = W^-1 a
//   prev = W^-1 [2 a - h^2 K^T f(K a + b) - next]
//
// Both states start at the input (zero initial velocity).

#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "rblr/blr_layer.hpp"
#include "rblr/conv.hpp"
#include "rblr/haar.hpp"
#include "rblr/tensor.hpp"

namespace rblr {

struct LayerSpec {
  int m = 1;
  int n = 1;
  ResolutionChange resolution = ResolutionChange::Identity;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
  Shape input_shape{};
  double h = 0.1;
  std::vector<LayerSpec> layers;
  Activation activation = Activation::relu();

  /// Grid and channel count of the state after each layer; entry 0 is the input.
  std::vector<Shape> state_shapes() const;
  Shape output_shape() const { return state_shapes().back(); }
  /// Throws ShapeError when channel bookkeeping or divisibility fails.
  void validate() const;
};

/// One kernel stack per layer, in layer order.
using NetworkParams = std::vector<KernelStack>;

void check_params(const NetworkSpec& spec, const NetworkParams& params);

struct LeapfrogPair {
  Tensor5D prev;
  Tensor5D curr;
};

/// Counts live state-sized tensors held by the propagation routines.
class StateMonitor {
 public:
  void acquire() {
    ++live_;
    if (live_ > peak_) peak_ = live_;
  }
  void release() { --live_; }
  std::size_t live() const { return live_; }
  std::size_t peak() const { return peak_; }
  void reset() { live_ = peak_ = 0; }

 private:
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
};

/// Separate counters for primal network states (including the one forcing
/// workspace) and for their adjoints during a gradient sweep.
struct MemoryProbe {
  StateMonitor states;
  StateMonitor adjoints;
};

/// next = 2 W(y_curr) - W(y_prev) - h^2 K^T f(K W(y_curr) + b)
Tensor5D forward_step(const LayerSpec& layer, const KernelStack& ks, double h, const Tensor5D& y_prev,
                      const Tensor5D& y_curr, Activation f = Activation::relu());

struct ForwardResult {
  Tensor5D output;
  LeapfrogPair final_states;
};

ForwardResult forward(const NetworkSpec& spec, const NetworkParams& params, const Tensor5D& x,
                      StateMonitor* monitor = nullptr);

/// Undoes one layer: given the pair after the layer, returns the pair before it.
LeapfrogPair reverse_step(const LayerSpec& layer, const KernelStack& ks, double h, const LeapfrogPair& after,
                          Activation f = Activation::relu());

/// Pair before layer `layer_index` (0-based) from the pair after it.
LeapfrogPair reverse_reconstruct(const NetworkSpec& spec, const NetworkParams& params, std::size_t layer_index,
                                 const LeapfrogPair& after);

/// Every pair of a forward run; entry j is the pair after j layers (entry 0 = (x, x)).
std::vector<LeapfrogPair> forward_all_states(const NetworkSpec& spec, const NetworkParams& params,
                                             const Tensor5D& x);

/// Walks back from the final pair; entry j is the reconstructed pair after j layers.
std::vector<LeapfrogPair> reconstruct_all_states(const NetworkSpec& spec, const NetworkParams& params,
                                                 const LeapfrogPair& final_states);

struct LossValue {
  double loss = 0.0;
  /// d loss / d output
  Tensor5D grad;
};
using LossFn = std::function<LossValue(const Tensor5D& output)>;

struct StackGradient {
  std::vector<double> kernels;
  std::vector<double> bias;
};

struct NetworkGradient {
  double loss = 0.0;
  std::vector<StackGradient> layers;
  Tensor5D grad_input;
};

/// Gradient by a backward sweep that reconstructs each state just in time,
/// holding a bounded number of state tensors regardless of depth.
NetworkGradient gradient(const NetworkSpec& spec, const NetworkParams& params, const Tensor5D& x,
                         const LossFn& loss_fn, MemoryProbe* probe = nullptr);

/// Reference gradient that keeps every forward state instead of reconstructing.
NetworkGradient gradient_stored(const NetworkSpec& spec, const NetworkParams& params, const Tensor5D& x,
                                const LossFn& loss_fn);

}  // namespace rblr
