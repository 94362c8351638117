// SPDX-License-Identifier: Apache-2.0

#include "rblr/conv.hpp"

#include <algorithm>
#include <atomic>
#include <string>

#include "rblr/parallel.hpp"

namespace rblr {

namespace {

std::atomic<std::uint64_t> g_forward_convs{0};
std::atomic<std::uint64_t> g_adjoint_convs{0};

// Valid output range [lo, hi) along one axis of length len for offset d in {-1,0,1}.
inline void valid_range(std::int64_t len, int d, std::int64_t& lo, std::int64_t& hi) {
  lo = std::max<std::int64_t>(0, -d);
  hi = std::min<std::int64_t>(len, len - d);
}

// out(p) += sum_t w[t] * in(p + sign * off(t)) with zero padding.
template <int Sign>
void shifted_accumulate(std::span<const double, kKernelTaps> w, const Shape& g, std::span<const double> in,
                        std::span<double> out) {
  const std::int64_t nx = g.nx, ny = g.ny, nz = g.nz;
  for (int dz = 0; dz < 3; ++dz) {
    for (int dy = 0; dy < 3; ++dy) {
      for (int dx = 0; dx < 3; ++dx) {
        const double wt = w[tap_index(dx, dy, dz)];
        if (wt == 0.0) continue;
        const int ox = Sign * (dx - 1), oy = Sign * (dy - 1), oz = Sign * (dz - 1);
        std::int64_t x0, x1, y0, y1, z0, z1;
        valid_range(nx, ox, x0, x1);
        valid_range(ny, oy, y0, y1);
        valid_range(nz, oz, z0, z1);
        for (std::int64_t z = z0; z < z1; ++z) {
          for (std::int64_t y = y0; y < y1; ++y) {
            double* o = out.data() + (z * ny + y) * nx;
            const double* s = in.data() + ((z + oz) * ny + (y + oy)) * nx + ox;
            for (std::int64_t x = x0; x < x1; ++x) o[x] += wt * s[x];
          }
        }
      }
    }
  }
}

void require_grid(const Shape& g, std::size_t n, const char* what) {
  if (n != static_cast<std::size_t>(g.volume())) {
    throw ShapeError(std::string(what) + ": buffer length " + std::to_string(n) + " does not match grid " +
                     g.str());
  }
}

}  // namespace

Kernel3D delta_kernel() {
  Kernel3D k{};
  k[tap_index(1, 1, 1)] = 1.0;
  return k;
}

KernelStack::KernelStack(int m, int n) : m_(m), n_(n) {
  if (m < 1 || n < 1) {
    throw ShapeError("kernel stack needs m, n >= 1, got " + std::to_string(m) + "x" + std::to_string(n));
  }
  weights_.assign(kernel_count() * kKernelTaps, 0.0);
  bias_.assign(static_cast<std::size_t>(m), 0.0);
}

KernelStack::KernelStack(int m, int n, std::vector<double> weights, std::vector<double> bias)
    : KernelStack(m, n) {
  if (weights.size() != weights_.size() || bias.size() != bias_.size()) {
    throw ShapeError("kernel stack " + std::to_string(m) + "x" + std::to_string(n) +
                     ": weight/bias buffer size mismatch");
  }
  weights_ = std::move(weights);
  bias_ = std::move(bias);
}

std::span<double, kKernelTaps> KernelStack::kernel(int i, int j) {
  const auto off = (static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)) *
                   kKernelTaps;
  return std::span<double, kKernelTaps>(weights_.data() + off, kKernelTaps);
}

std::span<const double, kKernelTaps> KernelStack::kernel(int i, int j) const {
  const auto off = (static_cast<std::size_t>(i) * static_cast<std::size_t>(n_) + static_cast<std::size_t>(j)) *
                   kKernelTaps;
  return std::span<const double, kKernelTaps>(weights_.data() + off, kKernelTaps);
}

void KernelStack::set_kernel(int i, int j, const Kernel3D& k) { std::ranges::copy(k, kernel(i, j).begin()); }

KernelStack identity_stack(int n) {
  KernelStack ks(n, n);
  for (int i = 0; i < n; ++i) ks.set_kernel(i, i, delta_kernel());
  return ks;
}

void conv3d_accumulate(std::span<const double, kKernelTaps> k, const Shape& grid, std::span<const double> x,
                       std::span<double> out) {
  require_grid(grid, x.size(), "conv3d");
  require_grid(grid, out.size(), "conv3d");
  g_forward_convs.fetch_add(1, std::memory_order_relaxed);
  shifted_accumulate<+1>(k, grid, x, out);
}

void conv3d(std::span<const double, kKernelTaps> k, const Shape& grid, std::span<const double> x,
            std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  conv3d_accumulate(k, grid, x, out);
}

void conv3d_adjoint_accumulate(std::span<const double, kKernelTaps> k, const Shape& grid,
                               std::span<const double> y, std::span<double> out) {
  require_grid(grid, y.size(), "conv3d_adjoint");
  require_grid(grid, out.size(), "conv3d_adjoint");
  g_adjoint_convs.fetch_add(1, std::memory_order_relaxed);
  shifted_accumulate<-1>(k, grid, y, out);
}

void conv3d_adjoint(std::span<const double, kKernelTaps> k, const Shape& grid, std::span<const double> y,
                    std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  conv3d_adjoint_accumulate(k, grid, y, out);
}

void conv3d_kernel_grad_accumulate(const Shape& g, std::span<const double> x, std::span<const double> ybar,
                                   std::span<double, kKernelTaps> grad) {
  require_grid(g, x.size(), "conv3d_kernel_grad");
  require_grid(g, ybar.size(), "conv3d_kernel_grad");
  const std::int64_t nx = g.nx, ny = g.ny, nz = g.nz;
  for (int dz = 0; dz < 3; ++dz) {
    for (int dy = 0; dy < 3; ++dy) {
      for (int dx = 0; dx < 3; ++dx) {
        const int ox = dx - 1, oy = dy - 1, oz = dz - 1;
        std::int64_t x0, x1, y0, y1, z0, z1;
        valid_range(nx, ox, x0, x1);
        valid_range(ny, oy, y0, y1);
        valid_range(nz, oz, z0, z1);
        double acc = 0.0;
        for (std::int64_t z = z0; z < z1; ++z) {
          for (std::int64_t y = y0; y < y1; ++y) {
            const double* yb = ybar.data() + (z * ny + y) * nx;
            const double* s = x.data() + ((z + oz) * ny + (y + oy)) * nx + ox;
            for (std::int64_t i = x0; i < x1; ++i) acc += yb[i] * s[i];
          }
        }
        grad[tap_index(dx, dy, dz)] += acc;
      }
    }
  }
}

Tensor5D conv3d(const Kernel3D& k, const Tensor5D& x) {
  if (x.channels() != 1) throw ShapeError("conv3d expects a single-channel volume, got " + x.shape().str());
  Tensor5D out(x.shape());
  conv3d(std::span<const double, kKernelTaps>(k), x.shape(), x.data(), out.data());
  return out;
}

Tensor5D conv3d_adjoint(const Kernel3D& k, const Tensor5D& y) {
  if (y.channels() != 1) {
    throw ShapeError("conv3d_adjoint expects a single-channel volume, got " + y.shape().str());
  }
  Tensor5D out(y.shape());
  conv3d_adjoint(std::span<const double, kKernelTaps>(k), y.shape(), y.data(), out.data());
  return out;
}

Tensor5D apply_K(const KernelStack& ks, const Tensor5D& y) {
  if (y.channels() != ks.cols()) {
    throw ShapeError("apply_K: input has " + std::to_string(y.channels()) + " channels, stack expects " +
                     std::to_string(ks.cols()));
  }
  Tensor5D out(y.shape().with_channels(ks.rows()));
  const Shape grid = y.shape();
  parallel_for(static_cast<std::size_t>(ks.rows()), [&](std::size_t i) {
    auto dst = out.channel(static_cast<std::int64_t>(i));
    for (int j = 0; j < ks.cols(); ++j) conv3d_accumulate(ks.kernel(static_cast<int>(i), j), grid, y.channel(j), dst);
  });
  return out;
}

Tensor5D apply_Kt(const KernelStack& ks, const Tensor5D& y) {
  if (y.channels() != ks.rows()) {
    throw ShapeError("apply_Kt: input has " + std::to_string(y.channels()) + " channels, stack expects " +
                     std::to_string(ks.rows()));
  }
  Tensor5D out(y.shape().with_channels(ks.cols()));
  const Shape grid = y.shape();
  parallel_for(static_cast<std::size_t>(ks.cols()), [&](std::size_t j) {
    auto dst = out.channel(static_cast<std::int64_t>(j));
    for (int i = 0; i < ks.rows(); ++i) {
      conv3d_adjoint_accumulate(ks.kernel(i, static_cast<int>(j)), grid, y.channel(i), dst);
    }
  });
  return out;
}

ConvCounts conv_counts() {
  return {g_forward_convs.load(std::memory_order_relaxed), g_adjoint_convs.load(std::memory_order_relaxed)};
}

void reset_conv_counts() {
  g_forward_convs.store(0, std::memory_order_relaxed);
  g_adjoint_convs.store(0, std::memory_order_relaxed);
}

}  // namespace rblr
