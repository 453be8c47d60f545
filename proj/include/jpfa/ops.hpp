#pragma once

#include <vector>

#include "jpfa/tensor.hpp"

namespace jpfa::ops {

// 2-D cross-correlation. input is NCHW, kernel is OIHW; the kernel's I must
// equal the input's C. Output spatial dims must come out positive.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding);

// Adds bias[c] to every element of channel c of an NCHW tensor.
Tensor channel_bias(const Tensor& input, const Tensor& bias);

// Window max over NCHW spatial dims, no padding. Gradient routes to the
// first position attaining the max within each window.
Tensor maxpool2d(const Tensor& input, int window, int stride);

// Affine map: input N x D, weight D x K, bias K -> output N x K.
Tensor dense(const Tensor& input, const Tensor& weight, const Tensor& bias);

// Same data, new shape; element count must match.
Tensor reshape(const Tensor& input, Shape new_shape);

// Doubles both spatial dims of an NCHW tensor by pixel repetition.
Tensor upsample_nearest2x(const Tensor& input);

// Normalizes each (image, channel) plane of an NCHW tensor to zero mean and
// unit variance. No learned affine; surrounding convs carry scale and shift.
Tensor instance_norm(const Tensor& input, double epsilon = 1e-5);

// Reductions. Empty axes list means reduce everything to a single element.
// Otherwise the listed axes are removed from the shape (all axes listed
// still yields shape [1]).
Tensor reduce_sum(const Tensor& input, const std::vector<int>& axes = {});
Tensor reduce_mean(const Tensor& input, const std::vector<int>& axes = {});

// Row i of an N x K matrix as a length-K tensor.
Tensor row(const Tensor& matrix, int i);

// Stacks equal-length vectors into an N x K matrix.
Tensor stack_rows(const std::vector<Tensor>& rows);

// out[i][j] = squared Euclidean distance between row i of a (n x K) and
// row j of b (m x K). Fused so large kernel matrices stay one graph node.
Tensor pairwise_sqdist(const Tensor& a, const Tensor& b);

}  // namespace jpfa::ops
