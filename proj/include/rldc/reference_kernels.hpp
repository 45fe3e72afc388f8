#pragma once

// Serial direct-loop versions of the hot kernels. They share no code with
// kernels.cpp and exist so tests and benchmarks have an independent baseline.

#include "rldc/kernels.hpp"
#include "rldc/tensor.hpp"

namespace rldc::reference {

// input [C,H,W] -> [Cout,H',W'], six nested loops.
Tensor conv2d_forward(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
                      const Tensor& bias);

struct ConvGrads {
  Tensor input;    // [C,H,W]
  Tensor weights;  // [Cout,C,kh,kw]
  Tensor bias;     // [Cout]
};

// Gradients of sum(grad_out * conv(input)) by scattering each output term.
ConvGrads conv2d_backward(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
                          const Tensor& grad_out);

// input [n] -> [m]
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);

}  // namespace rldc::reference
