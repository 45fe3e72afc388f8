#include "rldc/reference_kernels.hpp"

#include <stdexcept>

namespace rldc::reference {

Tensor conv2d_forward(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
                      const Tensor& bias) {
  if (input.rank() != 3 || input.dim(0) != spec.in_channels) {
    throw std::invalid_argument("reference conv2d: bad input shape " +
                                shape_string(input.shape()));
  }
  const std::size_t h = input.dim(1), w = input.dim(2);
  const std::size_t oh = spec.out_h(h), ow = spec.out_w(w);
  Tensor out({spec.out_channels, oh, ow});
  for (std::size_t co = 0; co < spec.out_channels; ++co) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        double acc = bias[co];
        for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
          for (std::size_t i = 0; i < spec.kernel_h; ++i) {
            for (std::size_t j = 0; j < spec.kernel_w; ++j) {
              acc += weights.at({co, ci, i, j}) *
                     input.at({ci, y * spec.stride + i, x * spec.stride + j});
            }
          }
        }
        out.at({co, y, x}) = acc;
      }
    }
  }
  return out;
}

ConvGrads conv2d_backward(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
                          const Tensor& grad_out) {
  const std::size_t oh = grad_out.dim(1), ow = grad_out.dim(2);
  ConvGrads g{Tensor(input.shape()), Tensor(weights.shape()), Tensor({spec.out_channels})};
  for (std::size_t co = 0; co < spec.out_channels; ++co) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const double up = grad_out.at({co, y, x});
        g.bias[co] += up;
        for (std::size_t ci = 0; ci < spec.in_channels; ++ci) {
          for (std::size_t i = 0; i < spec.kernel_h; ++i) {
            for (std::size_t j = 0; j < spec.kernel_w; ++j) {
              const std::size_t iy = y * spec.stride + i, ix = x * spec.stride + j;
              g.weights.at({co, ci, i, j}) += up * input.at({ci, iy, ix});
              g.input.at({ci, iy, ix}) += up * weights.at({co, ci, i, j});
            }
          }
        }
      }
    }
  }
  return g;
}

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  const std::size_t m = weights.dim(0), n = weights.dim(1);
  if (input.size() != n) throw std::invalid_argument("reference linear: dimension mismatch");
  Tensor out({m});
  for (std::size_t r = 0; r < m; ++r) {
    double acc = bias[r];
    for (std::size_t c = 0; c < n; ++c) acc += weights.at({r, c}) * input[c];
    out[r] = acc;
  }
  return out;
}

}  // namespace rldc::reference
