// SPDX-License-Identifier: Apache-2.0

#include "rblr/blr_layer.hpp"

#include <string>

#include "rblr/parallel.hpp"

namespace rblr {

namespace {

// z = K y + b
Tensor5D preactivation(const KernelStack& ks, const Tensor5D& y) {
  Tensor5D z = apply_K(ks, y);
  for (int i = 0; i < ks.rows(); ++i) {
    const double b = ks.bias()[static_cast<std::size_t>(i)];
    if (b == 0.0) continue;
    for (double& v : z.channel(i)) v += b;
  }
  return z;
}

LayerGradient vjp_impl(const KernelStack& ks, Activation f, const Tensor5D& y, const Tensor5D& ybar,
                       bool want_value) {
  if (y.channels() != ks.cols()) {
    throw ShapeError("layer_vjp: input has " + std::to_string(y.channels()) + " channels, stack expects " +
                     std::to_string(ks.cols()));
  }
  require_same_shape(y, ybar, "layer_vjp");

  const Shape grid = y.shape();
  Tensor5D z = preactivation(ks, y);
  Tensor5D act(z.shape());
  Tensor5D delta = apply_K(ks, ybar);  // becomes -D (K ybar)
  {
    auto zs = z.data();
    auto as = act.data();
    auto ds = delta.data();
    for (std::size_t k = 0; k < zs.size(); ++k) {
      as[k] = f(zs[k]);
      ds[k] = -f.derivative(zs[k]) * ds[k];
    }
  }

  LayerGradient g;
  g.grad_y = apply_Kt(ks, delta);
  if (want_value) {
    g.value = apply_Kt(ks, act);
    for (double& v : g.value.data()) v = -v;
  }

  g.grad_kernels.assign(ks.weights().size(), 0.0);
  g.grad_bias.assign(static_cast<std::size_t>(ks.rows()), 0.0);
  const auto m = static_cast<std::size_t>(ks.rows());
  const auto n = static_cast<std::size_t>(ks.cols());

  // Left factor -K^T a contributes -<K_ij ybar_j, a_i>; the inner K y + b
  // contributes <K_ij y_j, delta_i>.
  parallel_for(m * n, [&](std::size_t idx) {
    const auto i = static_cast<std::int64_t>(idx / n);
    const auto j = static_cast<std::int64_t>(idx % n);
    std::span<double, kKernelTaps> gk(g.grad_kernels.data() + idx * kKernelTaps, kKernelTaps);
    Kernel3D left{};
    conv3d_kernel_grad_accumulate(grid, ybar.channel(j), act.channel(i), std::span<double, kKernelTaps>(left));
    for (int t = 0; t < kKernelTaps; ++t) gk[t] = -left[t];
    conv3d_kernel_grad_accumulate(grid, y.channel(j), delta.channel(i), gk);
  });
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (double v : delta.channel(static_cast<std::int64_t>(i))) s += v;
    g.grad_bias[i] = s;
  }
  return g;
}

}  // namespace

Tensor5D layer_apply(const KernelStack& ks, Activation f, const Tensor5D& y) {
  if (y.channels() != ks.cols()) {
    throw ShapeError("layer_apply: input has " + std::to_string(y.channels()) + " channels, stack expects " +
                     std::to_string(ks.cols()));
  }
  Tensor5D z = preactivation(ks, y);
  for (double& v : z.data()) v = f(v);
  Tensor5D out = apply_Kt(ks, z);
  for (double& v : out.data()) v = -v;
  return out;
}

double layer_quadratic_form(const KernelStack& ks, const Tensor5D& y, Activation f) {
  const Tensor5D z = apply_K(ks, y);
  double s = 0.0;
  for (double v : z.data()) s += v * f(v);
  return s;
}

LayerGradient layer_vjp(const KernelStack& ks, Activation f, const Tensor5D& y, const Tensor5D& ybar) {
  return vjp_impl(ks, f, y, ybar, false);
}

LayerGradient layer_apply_and_vjp(const KernelStack& ks, Activation f, const Tensor5D& y, const Tensor5D& ybar) {
  return vjp_impl(ks, f, y, ybar, true);
}

}  // namespace rblr
