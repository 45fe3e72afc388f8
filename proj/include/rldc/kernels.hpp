#pragma once

// Differentiable building blocks for the Q-networks.
//
// Layers follow a tape convention: forward() records what backward() needs,
// and backward(input, output) reads output.grad() and *adds* into
// input.grad() and the layer's parameter gradients. Every layer accepts a
// leading batch axis; the free functions accept a single sample as well.
//
// The hot paths (convolution and dense layers) are lowered to GEMM through
// Eigen and OpenMP-parallel im2col/col2im. Naive loop versions live in
// reference_kernels.hpp and are what the tests compare against.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "rldc/tensor.hpp"

namespace rldc {

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;

  // Valid-convolution output extent; throws when the kernel does not fit.
  std::size_t out_h(std::size_t in_h) const;
  std::size_t out_w(std::size_t in_w) const;

  std::size_t weight_count() const noexcept {
    return out_channels * in_channels * kernel_h * kernel_w;
  }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

Tensor conv2d_forward(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
                      const Tensor& bias);
Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias);
Tensor relu(const Tensor& input);

struct MaxPoolResult {
  Tensor pooled;                                          // [C]
  std::vector<std::pair<std::size_t, std::size_t>> argmax;  // (h, w) per channel
};

// First maximal element in row-major order wins ties.
MaxPoolResult global_max_pool(const Tensor& input);

class Conv2d {
 public:
  explicit Conv2d(const ConvSpec& spec);
  Conv2d(const ConvSpec& spec, Tensor weight, Tensor bias);

  const ConvSpec& spec() const noexcept { return spec_; }
  Tensor& weight() noexcept { return weight_; }
  const Tensor& weight() const noexcept { return weight_; }
  Tensor& bias() noexcept { return bias_; }
  const Tensor& bias() const noexcept { return bias_; }

  Tensor forward(const Tensor& input);
  // Writes into `output`, reusing its storage.
  void forward(const Tensor& input, Tensor& output);
  Tensor infer(const Tensor& input) const;
  // When propagate is false the input gradient is skipped (first layer).
  void backward(Tensor& input, const Tensor& output, bool propagate = true);
  void clear_record() noexcept;

 private:
  ConvSpec spec_;
  Tensor weight_;  // [out, in, kh, kw]
  Tensor bias_;    // [out]
  AlignedBuffer cols_;
  AlignedBuffer scratch_;
  AlignedBuffer scratch_cols_;
  Shape recorded_input_;
  bool recorded_ = false;
};

class Linear {
 public:
  Linear(std::size_t in_features, std::size_t out_features);
  Linear(Tensor weight, Tensor bias);

  std::size_t in_features() const noexcept { return weight_.dim(1); }
  std::size_t out_features() const noexcept { return weight_.dim(0); }
  Tensor& weight() noexcept { return weight_; }
  const Tensor& weight() const noexcept { return weight_; }
  Tensor& bias() noexcept { return bias_; }
  const Tensor& bias() const noexcept { return bias_; }

  Tensor forward(const Tensor& input);
  void forward(const Tensor& input, Tensor& output);
  Tensor infer(const Tensor& input) const;
  void backward(Tensor& input, const Tensor& output, bool propagate = true);

 private:
  Tensor weight_;  // [out, in]
  Tensor bias_;    // [out]
  Shape recorded_input_;
  bool recorded_ = false;
};

class Relu {
 public:
  Tensor forward(const Tensor& input);
  void forward(const Tensor& input, Tensor& output);
  void backward(Tensor& input, const Tensor& output);

 private:
  Shape recorded_input_;
  bool recorded_ = false;
};

// [N, C, H, W] -> [N, C]; gradient is routed to the recorded argmax only.
class GlobalMaxPool {
 public:
  Tensor forward(const Tensor& input);
  void forward(const Tensor& input, Tensor& output);
  Tensor infer(const Tensor& input) const;
  void backward(Tensor& input, const Tensor& output);
  std::span<const std::size_t> argmax() const noexcept { return argmax_; }

 private:
  std::vector<std::size_t> argmax_;  // flat spatial index per (n, c)
  Shape recorded_input_;
  bool recorded_ = false;
};

struct PolicyDistribution {
  std::vector<double> probs;

  std::size_t size() const noexcept { return probs.size(); }
  double operator[](std::size_t a) const noexcept { return probs[a]; }
  // Throws unless entries are positive and sum to 1 within 1e-9.
  void validate() const;
};

PolicyDistribution softmax_temperature(std::span<const double> q, double tau);

// KL(p || q) = sum_a p(a) ln(p(a)/q(a)), with 0 ln 0 = 0.
double kl_divergence(const PolicyDistribution& p, const PolicyDistribution& q);

struct KlLoss {
  double loss = 0.0;
  std::vector<double> grad_logits;
};

// KL(target || softmax(logits / tau)) and its gradient with respect to the
// logits, (softmax(logits / tau) - target) / tau.
KlLoss kl_softmax_loss(const PolicyDistribution& target, std::span<const double> logits,
                       double tau);

struct RmsPropConfig {
  double lr = 2.5e-4;
  double decay = 0.95;
  double epsilon = 1e-6;
};

// s <- decay*s + (1-decay)*g^2 ; p <- p - lr*g/sqrt(s + epsilon)
void rmsprop_step(std::span<double> params, std::span<const double> grads,
                  std::span<double> state, const RmsPropConfig& config);

class RmsProp {
 public:
  explicit RmsProp(RmsPropConfig config = {}) : config_(config) {}

  // Applies one step to every tensor using its gradient plane. The tensor
  // list must be the same (in order and shape) on every call.
  void step(std::span<Tensor* const> params);
  const RmsPropConfig& config() const noexcept { return config_; }

 private:
  RmsPropConfig config_;
  std::vector<std::vector<double>> state_;
};

struct HuberResult {
  double loss = 0.0;
  double grad = 0.0;  // d loss / d pred
};

HuberResult huber_loss(double pred, double target, double delta = 1.0);

}  // namespace rldc
