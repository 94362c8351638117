// SPDX-License-Identifier: Apache-2.0
//
// 3x3x3 convolution (cross-correlation, stride 1, one voxel of zero padding
// on each face) and its exact adjoint, plus the block convolution matrix K
// built from an m x n grid of such kernels.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "rblr/tensor.hpp"

namespace rblr {

inline constexpr int kKernelTaps = 27;

/// Tap t = (dz * 3 + dy) * 3 + dx reads the input at offset (dx-1, dy-1, dz-1).
using Kernel3D = std::array<double, kKernelTaps>;

inline constexpr int tap_index(int dx, int dy, int dz) { return (dz * 3 + dy) * 3 + dx; }

Kernel3D delta_kernel();

/// m block rows (output channels) by n block columns (input channels).
/// Weights are stored row-major over blocks, [i][j][tap], so adding block
/// rows appends to the buffer and leaves existing weights in place.
class KernelStack {
 public:
  KernelStack() = default;
  KernelStack(int m, int n);
  KernelStack(int m, int n, std::vector<double> weights, std::vector<double> bias);

  int rows() const { return m_; }
  int cols() const { return n_; }
  std::size_t kernel_count() const { return static_cast<std::size_t>(m_) * static_cast<std::size_t>(n_); }

  std::span<double, kKernelTaps> kernel(int i, int j);
  std::span<const double, kKernelTaps> kernel(int i, int j) const;
  void set_kernel(int i, int j, const Kernel3D& k);

  std::span<double> weights() { return weights_; }
  std::span<const double> weights() const { return weights_; }
  std::span<double> bias() { return bias_; }
  std::span<const double> bias() const { return bias_; }

  friend bool operator==(const KernelStack&, const KernelStack&) = default;

 private:
  int m_ = 0;
  int n_ = 0;
  std::vector<double> weights_;
  std::vector<double> bias_;
};

/// Square stack with delta kernels on the block diagonal: apply_K is the identity.
KernelStack identity_stack(int n);

/// out = K(theta) x for one channel on a grid of the given shape (nchan ignored).
void conv3d(std::span<const double, kKernelTaps> k, const Shape& grid, std::span<const double> x,
            std::span<double> out);
/// out += K(theta) x
void conv3d_accumulate(std::span<const double, kKernelTaps> k, const Shape& grid,
                       std::span<const double> x, std::span<double> out);
/// out = K(theta)^T y
void conv3d_adjoint(std::span<const double, kKernelTaps> k, const Shape& grid, std::span<const double> y,
                    std::span<double> out);
/// out += K(theta)^T y
void conv3d_adjoint_accumulate(std::span<const double, kKernelTaps> k, const Shape& grid,
                               std::span<const double> y, std::span<double> out);
/// grad[t] += d<ybar, K(theta) x>/d theta[t]
void conv3d_kernel_grad_accumulate(const Shape& grid, std::span<const double> x, std::span<const double> ybar,
                                   std::span<double, kKernelTaps> grad);

/// Tensor convenience overloads on single-channel volumes.
Tensor5D conv3d(const Kernel3D& k, const Tensor5D& x);
Tensor5D conv3d_adjoint(const Kernel3D& k, const Tensor5D& y);

/// out^i = sum_j K(theta^{i,j}) y^j. Bias is not added here.
Tensor5D apply_K(const KernelStack& ks, const Tensor5D& y);
/// out^j = sum_i K(theta^{i,j})^T y^i
Tensor5D apply_Kt(const KernelStack& ks, const Tensor5D& y);

struct ConvCounts {
  std::uint64_t forward = 0;
  std::uint64_t adjoint = 0;
  std::uint64_t total() const { return forward + adjoint; }
};

/// Process-wide count of single-channel convolutions and adjoint
/// convolutions executed (kernel-gradient correlations are not counted).
ConvCounts conv_counts();
void reset_conv_counts();

}  // namespace rblr
