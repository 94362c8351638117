// SPDX-License-Identifier: Apache-2.0
//
// Dense multichannel volume with a zero-copy per-channel ("block-vector")
// view. Storage is channel-major and x-fastest inside each channel:
//   index(x, y, z, c) = ((c * nz + z) * ny + y) * nx + x

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rblr {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::int64_t nx = 1;
  std::int64_t ny = 1;
  std::int64_t nz = 1;
  std::int64_t nchan = 1;

  std::int64_t volume() const { return nx * ny * nz; }
  std::int64_t size() const { return volume() * nchan; }
  bool valid() const { return nx >= 1 && ny >= 1 && nz >= 1 && nchan >= 1; }
  bool same_grid(const Shape& o) const { return nx == o.nx && ny == o.ny && nz == o.nz; }
  Shape with_channels(std::int64_t c) const { return {nx, ny, nz, c}; }

  std::string str() const;
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Per-channel sub-vectors of a tensor, each of length nx*ny*nz.
using BlockVector = std::vector<std::span<const double>>;

class Tensor5D {
 public:
  Tensor5D() = default;
  explicit Tensor5D(Shape shape);
  Tensor5D(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::int64_t volume() const { return shape_.volume(); }
  std::int64_t channels() const { return shape_.nchan; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  std::span<double> channel(std::int64_t c);
  std::span<const double> channel(std::int64_t c) const;

  double& at(std::int64_t x, std::int64_t y, std::int64_t z, std::int64_t c) {
    return data_[index(x, y, z, c)];
  }
  double at(std::int64_t x, std::int64_t y, std::int64_t z, std::int64_t c) const {
    return data_[index(x, y, z, c)];
  }
  std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z, std::int64_t c) const {
    return static_cast<std::size_t>(((c * shape_.nz + z) * shape_.ny + y) * shape_.nx + x);
  }

  void fill(double v);

 private:
  Shape shape_{};
  std::vector<double> data_;
};

BlockVector flatten_view(const Tensor5D& t);

/// Inverse of flatten_view: concatenates equal-length channel vectors.
Tensor5D unflatten(Shape grid, const BlockVector& blocks);

/// out = a*x + y
Tensor5D axpy(double a, const Tensor5D& x, const Tensor5D& y);
/// y += a*x, in place.
void axpy_inplace(double a, const Tensor5D& x, Tensor5D& y);

Tensor5D add(const Tensor5D& x, const Tensor5D& y);
Tensor5D sub(const Tensor5D& x, const Tensor5D& y);
Tensor5D scale(double a, const Tensor5D& x);
Tensor5D neg(const Tensor5D& x);

double dot(const Tensor5D& x, const Tensor5D& y);
double norm2(const Tensor5D& x);
double max_abs(const Tensor5D& x);
double max_abs_diff(const Tensor5D& x, const Tensor5D& y);
/// max|x - ref| / max|ref|; falls back to the absolute difference when ref is zero.
double relative_error(const Tensor5D& x, const Tensor5D& ref);

void require_same_shape(const Tensor5D& x, const Tensor5D& y, const char* what);

}  // namespace rblr
