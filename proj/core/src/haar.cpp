// SPDX-License-Identifier: Apache-2.0

#include "rblr/haar.hpp"

#include <array>
#include <cmath>
#include <string>

#include "rblr/parallel.hpp"

namespace rblr {

namespace {

// Subband s -> (x, y, z) high-pass flags.
constexpr std::array<std::array<int, 3>, 8> kSubbands = {{
    {0, 0, 0},  // LLL
    {1, 0, 0},  // HLL
    {0, 1, 0},  // LHL
    {0, 0, 1},  // LLH
    {1, 1, 0},  // HHL
    {1, 0, 1},  // HLH
    {0, 1, 1},  // LHH
    {1, 1, 1},  // HHH
}};

// sign[s][corner], corner = (a, b, g) offsets packed as a + 2b + 4g.
constexpr std::array<std::array<double, 8>, 8> make_signs() {
  std::array<std::array<double, 8>, 8> sg{};
  for (int s = 0; s < 8; ++s) {
    for (int corner = 0; corner < 8; ++corner) {
      const int off[3] = {corner & 1, (corner >> 1) & 1, (corner >> 2) & 1};
      double v = 1.0;
      for (int ax = 0; ax < 3; ++ax) {
        if (kSubbands[s][ax] && off[ax]) v = -v;
      }
      sg[s][corner] = v;
    }
  }
  return sg;
}
constexpr auto kSigns = make_signs();

const double kScale = 1.0 / std::sqrt(8.0);

}  // namespace

std::string_view to_string(ResolutionChange r) {
  switch (r) {
    case ResolutionChange::Identity:
      return "identity";
    case ResolutionChange::HaarForward:
      return "haar_forward";
    case ResolutionChange::HaarInverse:
      return "haar_inverse";
  }
  return "identity";
}

ResolutionChange resolution_from_string(std::string_view s) {
  if (s == "identity") return ResolutionChange::Identity;
  if (s == "haar_forward") return ResolutionChange::HaarForward;
  if (s == "haar_inverse") return ResolutionChange::HaarInverse;
  throw std::invalid_argument("unknown resolution change '" + std::string(s) +
                              "' (expected identity, haar_forward or haar_inverse)");
}

Shape resolution_output_shape(ResolutionChange r, const Shape& in) {
  switch (r) {
    case ResolutionChange::Identity:
      return in;
    case ResolutionChange::HaarForward:
      if (in.nx % 2 || in.ny % 2 || in.nz % 2) {
        throw ShapeError("haar_forward needs even spatial dims, got " + in.str());
      }
      return {in.nx / 2, in.ny / 2, in.nz / 2, in.nchan * 8};
    case ResolutionChange::HaarInverse:
      if (in.nchan % 8) throw ShapeError("haar_inverse needs a channel count divisible by 8, got " + in.str());
      return {in.nx * 2, in.ny * 2, in.nz * 2, in.nchan / 8};
  }
  return in;
}

Tensor5D haar_forward(const Tensor5D& t) {
  const Shape in = t.shape();
  Tensor5D out(resolution_output_shape(ResolutionChange::HaarForward, in));
  const Shape os = out.shape();
  parallel_for(static_cast<std::size_t>(in.nchan), [&](std::size_t cu) {
    const auto c = static_cast<std::int64_t>(cu);
    for (std::int64_t z = 0; z < os.nz; ++z) {
      for (std::int64_t y = 0; y < os.ny; ++y) {
        for (std::int64_t x = 0; x < os.nx; ++x) {
          double v[8];
          for (int corner = 0; corner < 8; ++corner) {
            v[corner] = t.at(2 * x + (corner & 1), 2 * y + ((corner >> 1) & 1), 2 * z + ((corner >> 2) & 1), c);
          }
          for (int s = 0; s < 8; ++s) {
            double acc = 0.0;
            for (int corner = 0; corner < 8; ++corner) acc += kSigns[s][corner] * v[corner];
            out.at(x, y, z, c * 8 + s) = kScale * acc;
          }
        }
      }
    }
  });
  return out;
}

Tensor5D haar_inverse(const Tensor5D& t) {
  const Shape in = t.shape();
  Tensor5D out(resolution_output_shape(ResolutionChange::HaarInverse, in));
  const std::int64_t groups = in.nchan / 8;
  parallel_for(static_cast<std::size_t>(groups), [&](std::size_t cu) {
    const auto c = static_cast<std::int64_t>(cu);
    for (std::int64_t z = 0; z < in.nz; ++z) {
      for (std::int64_t y = 0; y < in.ny; ++y) {
        for (std::int64_t x = 0; x < in.nx; ++x) {
          double coef[8];
          for (int s = 0; s < 8; ++s) coef[s] = t.at(x, y, z, c * 8 + s);
          for (int corner = 0; corner < 8; ++corner) {
            double acc = 0.0;
            for (int s = 0; s < 8; ++s) acc += kSigns[s][corner] * coef[s];
            out.at(2 * x + (corner & 1), 2 * y + ((corner >> 1) & 1), 2 * z + ((corner >> 2) & 1), c) = kScale * acc;
          }
        }
      }
    }
  });
  return out;
}

Tensor5D apply_resolution(ResolutionChange r, const Tensor5D& t) {
  switch (r) {
    case ResolutionChange::HaarForward:
      return haar_forward(t);
    case ResolutionChange::HaarInverse:
      return haar_inverse(t);
    case ResolutionChange::Identity:
      break;
  }
  return t;
}

Tensor5D apply_resolution(ResolutionChange r, Tensor5D&& t) {
  if (r == ResolutionChange::Identity) return std::move(t);
  return apply_resolution(r, static_cast<const Tensor5D&>(t));
}

Tensor5D invert_resolution(ResolutionChange r, const Tensor5D& t) {
  switch (r) {
    case ResolutionChange::HaarForward:
      return haar_inverse(t);
    case ResolutionChange::HaarInverse:
      return haar_forward(t);
    case ResolutionChange::Identity:
      break;
  }
  return t;
}

Tensor5D invert_resolution(ResolutionChange r, Tensor5D&& t) {
  if (r == ResolutionChange::Identity) return std::move(t);
  return invert_resolution(r, static_cast<const Tensor5D&>(t));
}

}  // namespace rblr
