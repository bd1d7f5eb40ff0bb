#pragma once

// Differentiable primitives. Each op computes its output eagerly and, when any
// input requires a gradient and the graph is recording, appends a backward
// node to `g`.
//
// Binary elementwise ops accept identical shapes or one operand with a single
// element (scalar broadcast); nothing else broadcasts.

#include <cstdint>
#include <vector>

#include "tnas/graph.hpp"
#include "tnas/tensor.hpp"

namespace tnas::nd {

/// Same-size cross-correlation. input [N,Cin,H,W], kernel [Cout,Cin/groups,k,k],
/// bias [Cout] or undefined. `padding` must equal (k-1)/2.
Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding,
              int groups = 1);

/// [N, C*n*n, H, W] -> [N, C, n*H, n*W].
Tensor pixel_shuffle(Graph& g, const Tensor& input, int factor);

/// Inverse of pixel_shuffle (not differentiable; used for checks and data prep).
Tensor space_to_depth(const Tensor& input, int factor);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& a, double factor);
Tensor add_scalar(Graph& g, const Tensor& a, double value);
Tensor relu(Graph& g, const Tensor& a);
/// Gradient at exactly 0 is `slope`.
Tensor leaky_relu(Graph& g, const Tensor& a, double slope);
Tensor square(Graph& g, const Tensor& a);
/// Subgradient 0 at exactly 0.
Tensor abs(Graph& g, const Tensor& a);

Tensor sum(Graph& g, const Tensor& a);
Tensor mean(Graph& g, const Tensor& a);

/// Leading slice a[..., :length, ...] along `axis`.
Tensor narrow(Graph& g, const Tensor& a, std::size_t axis, std::int64_t length);
/// Appends zeros along `axis` until it has `length` entries.
Tensor pad_zeros(Graph& g, const Tensor& a, std::size_t axis, std::int64_t length);

/// Flat element `index` as a one-element tensor.
Tensor select(Graph& g, const Tensor& a, std::int64_t index);
/// Builds a vector from one-element tensors.
Tensor stack(Graph& g, const std::vector<Tensor>& scalars);
Tensor dot(Graph& g, const Tensor& a, const Tensor& b);

/// Identity forward; multiplies the incoming gradient by `factor`.
Tensor grad_scale(Graph& g, const Tensor& a, double factor);

/// One-element tensor with value `value` whose gradient w.r.t. `input` is the
/// given constant vector (for penalties whose local gradient is known in closed form).
Tensor constant_gradient(Graph& g, const Tensor& input, double value, std::vector<double> gradient);

}  // namespace tnas::nd
