// SPDX-License-Identifier: Apache-2.0
//
// Orthonormal 3-D Haar coarsening. Each 2x2x2 block of every input channel
// maps to 8 subband coefficients, stored as 8 consecutive output channels
// (input channel outermost) in the order
//   LLL, HLL, LHL, LLH, HHL, HLH, LHH, HHH
// where the letters refer to the x, y and z axes. Every basis vector has
// entries +-1/sqrt(8), so the transform is orthogonal and its inverse is
// its transpose.

#pragma once

#include <string_view>

#include "rblr/tensor.hpp"

namespace rblr {

enum class ResolutionChange { Identity, HaarForward, HaarInverse };

std::string_view to_string(ResolutionChange r);
/// Accepts "identity", "haar_forward", "haar_inverse".
ResolutionChange resolution_from_string(std::string_view s);

Tensor5D haar_forward(const Tensor5D& t);
Tensor5D haar_inverse(const Tensor5D& t);

/// Shape after applying r; throws ShapeError when r is not applicable.
Shape resolution_output_shape(ResolutionChange r, const Shape& in);

Tensor5D apply_resolution(ResolutionChange r, const Tensor5D& t);
Tensor5D apply_resolution(ResolutionChange r, Tensor5D&& t);
Tensor5D invert_resolution(ResolutionChange r, const Tensor5D& t);
Tensor5D invert_resolution(ResolutionChange r, Tensor5D&& t);

}  // namespace rblr
