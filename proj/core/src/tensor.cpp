// SPDX-License-Identifier: Apache-2.0

#include "rblr/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace rblr {

std::string Shape::str() const {
  return std::to_string(nx) + "x" + std::to_string(ny) + "x" + std::to_string(nz) + "x" +
         std::to_string(nchan);
}

Tensor5D::Tensor5D(Shape shape) : shape_(shape) {
  if (!shape.valid()) throw ShapeError("tensor shape must be positive, got " + shape.str());
  data_.assign(static_cast<std::size_t>(shape.size()), 0.0);
}

Tensor5D::Tensor5D(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (!shape.valid()) throw ShapeError("tensor shape must be positive, got " + shape.str());
  if (data_.size() != static_cast<std::size_t>(shape.size())) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape.str());
  }
}

std::span<double> Tensor5D::channel(std::int64_t c) {
  const auto vol = static_cast<std::size_t>(volume());
  return std::span<double>(data_).subspan(static_cast<std::size_t>(c) * vol, vol);
}

std::span<const double> Tensor5D::channel(std::int64_t c) const {
  const auto vol = static_cast<std::size_t>(volume());
  return std::span<const double>(data_).subspan(static_cast<std::size_t>(c) * vol, vol);
}

void Tensor5D::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

BlockVector flatten_view(const Tensor5D& t) {
  BlockVector blocks;
  blocks.reserve(static_cast<std::size_t>(t.channels()));
  for (std::int64_t c = 0; c < t.channels(); ++c) blocks.push_back(t.channel(c));
  return blocks;
}

Tensor5D unflatten(Shape grid, const BlockVector& blocks) {
  grid.nchan = static_cast<std::int64_t>(blocks.size());
  Tensor5D out(grid);
  for (std::size_t c = 0; c < blocks.size(); ++c) {
    if (blocks[c].size() != static_cast<std::size_t>(grid.volume())) {
      throw ShapeError("block " + std::to_string(c) + " has length " + std::to_string(blocks[c].size()) +
                       ", expected " + std::to_string(grid.volume()));
    }
    std::copy(blocks[c].begin(), blocks[c].end(), out.channel(static_cast<std::int64_t>(c)).begin());
  }
  return out;
}

void require_same_shape(const Tensor5D& x, const Tensor5D& y, const char* what) {
  if (x.shape() != y.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + x.shape().str() + " vs " + y.shape().str());
  }
}

Tensor5D axpy(double a, const Tensor5D& x, const Tensor5D& y) {
  require_same_shape(x, y, "axpy");
  Tensor5D out = y;
  axpy_inplace(a, x, out);
  return out;
}

void axpy_inplace(double a, const Tensor5D& x, Tensor5D& y) {
  require_same_shape(x, y, "axpy");
  auto xs = x.data();
  auto ys = y.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] += a * xs[i];
}

Tensor5D add(const Tensor5D& x, const Tensor5D& y) { return axpy(1.0, x, y); }

Tensor5D sub(const Tensor5D& x, const Tensor5D& y) {
  require_same_shape(x, y, "sub");
  Tensor5D out = x;
  axpy_inplace(-1.0, y, out);
  return out;
}

Tensor5D scale(double a, const Tensor5D& x) {
  Tensor5D out = x;
  for (double& v : out.data()) v *= a;
  return out;
}

Tensor5D neg(const Tensor5D& x) { return scale(-1.0, x); }

double dot(const Tensor5D& x, const Tensor5D& y) {
  require_same_shape(x, y, "dot");
  auto xs = x.data();
  auto ys = y.data();
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) s += xs[i] * ys[i];
  return s;
}

double norm2(const Tensor5D& x) { return std::sqrt(dot(x, x)); }

double max_abs(const Tensor5D& x) {
  double m = 0.0;
  for (double v : x.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Tensor5D& x, const Tensor5D& y) {
  require_same_shape(x, y, "max_abs_diff");
  auto xs = x.data();
  auto ys = y.data();
  double m = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) m = std::max(m, std::abs(xs[i] - ys[i]));
  return m;
}

double relative_error(const Tensor5D& x, const Tensor5D& ref) {
  const double diff = max_abs_diff(x, ref);
  const double scale = max_abs(ref);
  return scale > 0.0 ? diff / scale : diff;
}

}  // namespace rblr
