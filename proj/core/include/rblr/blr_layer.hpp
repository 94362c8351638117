// SPDX-License-Identifier: Apache-2.0
//
// Symmetric block-low-rank layer
//
//   L(y) = -K^T f(K y + b)
//
// with K an m x n block convolution matrix. The output keeps the n input
// channels for any m, and for a pointwise f with x*f(x) >= 0 the linear
// part K^T D K is symmetric positive semidefinite with block rank <= m.

#pragma once

#include <vector>

#include "rblr/conv.hpp"
#include "rblr/tensor.hpp"

namespace rblr {

struct Activation {
  enum class Kind {
    ReLU,
    /// Linear test mode, used to compare -K^T K against dense oracles.
    Identity,
  };
  Kind kind = Kind::ReLU;

  double operator()(double z) const { return kind == Kind::ReLU ? (z > 0.0 ? z : 0.0) : z; }
  /// Entry of the diagonal mask D. The ReLU subgradient at exactly 0 is 0.
  double derivative(double z) const { return kind == Kind::ReLU ? (z > 0.0 ? 1.0 : 0.0) : 1.0; }

  static Activation relu() { return {Kind::ReLU}; }
  static Activation identity() { return {Kind::Identity}; }
};

Tensor5D layer_apply(const KernelStack& ks, Activation f, const Tensor5D& y);

/// <y, K^T f(K y)> = <z, f(z)> with z = K y. The bias is ignored.
double layer_quadratic_form(const KernelStack& ks, const Tensor5D& y, Activation f = Activation::relu());

struct LayerGradient {
  Tensor5D grad_y;
  /// Same layout as KernelStack::weights().
  std::vector<double> grad_kernels;
  std::vector<double> grad_bias;
  /// layer_apply(ks, f, y); only filled by layer_apply_and_vjp.
  Tensor5D value;
};

/// Vector-Jacobian product of layer_apply at y against ybar. The mask D is
/// recomputed from y.
LayerGradient layer_vjp(const KernelStack& ks, Activation f, const Tensor5D& y, const Tensor5D& ybar);

/// layer_vjp that also returns the layer output, sharing the K y evaluation.
LayerGradient layer_apply_and_vjp(const KernelStack& ks, Activation f, const Tensor5D& y, const Tensor5D& ybar);

}  // namespace rblr
