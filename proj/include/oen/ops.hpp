#pragma once

#include <functional>

#include "oen/tape.hpp"
#include "oen/tensor.hpp"

namespace oen {

// ---------------------------------------------------------------------------
// value-level kernels (no tape)
// ---------------------------------------------------------------------------

// input [C,H,W], weights [N,C,kh,kw], bias [N] -> [N,H',W'] with
// H' = floor((H + 2*padding - kh)/stride) + 1 and likewise for W'.
Tensor conv2d_value(const Tensor& input, const Tensor& weights, const Tensor& bias, int stride, int padding);

// Accumulates gradients of a conv2d output into any non-null destination.
void conv2d_backward(const Tensor& input, const Tensor& weights, int stride, int padding, const Tensor& dout,
                     Tensor* dinput, Tensor* dweights, Tensor* dbias);

// ---------------------------------------------------------------------------
// tape operations
// ---------------------------------------------------------------------------

Var conv2d(Var input, Var weights, Var bias, int stride, int padding);

Var relu(Var x);
Var leaky_relu(Var x, double alpha);
Var sigmoid(Var x);
// softmax over axis 0 of a [K,H,W] tensor, per pixel
Var softmax_channels(Var x);

Var add(Var a, Var b);         // elementwise, same shape
Var mul(Var a, Var b);         // elementwise, same shape
Var scale(Var a, double c);
Var sum(Var x);                // -> scalar
Var mean(Var x);               // -> scalar
Var upsample2_nearest(Var x);  // [C,H,W] -> [C,2H,2W]

// ---------------------------------------------------------------------------
// finite-difference gradient oracle
// ---------------------------------------------------------------------------

// Central differences (loss(p + h*e_i) - loss(p - h*e_i)) / (2h) per
// coordinate. Throws if loss_fn returns a non-finite value or h <= 0.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& loss_fn, const Tensor& param, double h);

}  // namespace oen
