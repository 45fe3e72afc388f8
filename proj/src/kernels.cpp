#include "rldc/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace rldc {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

[[noreturn]] void shape_error(const std::string& op, const std::string& what) {
  throw std::invalid_argument(op + ": " + what);
}

std::string axis_msg(const char* tensor, std::size_t axis, const char* name, std::size_t got,
                     std::size_t want) {
  return std::string(tensor) + " axis " + std::to_string(axis) + " (" + name + ") has extent " +
         std::to_string(got) + ", expected " + std::to_string(want);
}

struct ConvGeometry {
  std::size_t n, c, h, w, oh, ow, k, p;
};

ConvGeometry conv_geometry(const Shape& in4, const ConvSpec& spec) {
  ConvGeometry g{};
  g.n = in4[0];
  g.c = in4[1];
  g.h = in4[2];
  g.w = in4[3];
  if (g.c != spec.in_channels) {
    shape_error("conv2d", axis_msg("input", 1, "channels", g.c, spec.in_channels));
  }
  g.oh = spec.out_h(g.h);
  g.ow = spec.out_w(g.w);
  g.k = spec.in_channels * spec.kernel_h * spec.kernel_w;
  g.p = g.oh * g.ow;
  return g;
}

Shape as_batch4(const Tensor& input, const char* op) {
  if (input.rank() == 4) return input.shape();
  if (input.rank() == 3) return {1, input.dim(0), input.dim(1), input.dim(2)};
  shape_error(op, "input must have rank 3 [C,H,W] or 4 [N,C,H,W], got " +
                      shape_string(input.shape()));
}

void check_conv_params(const ConvSpec& spec, const Tensor& weight, const Tensor& bias) {
  if (spec.stride < 1) shape_error("conv2d", "stride must be >= 1");
  const Shape want{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
  if (weight.rank() != 4) {
    shape_error("conv2d", "weights must have rank 4, got " + shape_string(weight.shape()));
  }
  static const char* names[] = {"out_channels", "in_channels", "kernel_h", "kernel_w"};
  for (std::size_t a = 0; a < 4; ++a) {
    if (weight.dim(a) != want[a]) {
      shape_error("conv2d", axis_msg("weights", a, names[a], weight.dim(a), want[a]));
    }
  }
  if (bias.rank() != 1 || bias.dim(0) != spec.out_channels) {
    shape_error("conv2d", "bias shape " + shape_string(bias.shape()) + " does not match " +
                              std::to_string(spec.out_channels) + " output channels");
  }
}

// cols is row-major [N*P, K]: row n*P + (oy*OW + ox) holds the receptive
// field of that output position, column k = (c, i, j). Each kernel row is a
// contiguous run of kernel_w input values.
void im2col(const double* x, const ConvGeometry& g, const ConvSpec& spec, double* cols) {
  const auto rows = static_cast<std::ptrdiff_t>(g.n * g.p);
  const std::size_t kw = spec.kernel_w;
#pragma omp parallel for schedule(static) if (g.k * g.n * g.p > 65536)
  for (std::ptrdiff_t rr = 0; rr < rows; ++rr) {
    const auto r = static_cast<std::size_t>(rr);
    const std::size_t n = r / g.p;
    const std::size_t oy = (r % g.p) / g.ow;
    const std::size_t ox = r % g.ow;
    double* dst = cols + r * g.k;
    for (std::size_t c = 0; c < g.c; ++c) {
      const double* plane = x + ((n * g.c + c) * g.h + oy * spec.stride) * g.w + ox * spec.stride;
      for (std::size_t i = 0; i < spec.kernel_h; ++i) {
        const double* src = plane + i * g.w;
        for (std::size_t j = 0; j < kw; ++j) dst[j] = src[j];
        dst += kw;
      }
    }
  }
}

// Accumulates cols-shaped gradients back onto the input gradient plane.
// Parallel over samples only: rows of one sample overlap in the input.
void col2im(const double* dcols, const ConvGeometry& g, const ConvSpec& spec, double* dx) {
  const auto samples = static_cast<std::ptrdiff_t>(g.n);
  const std::size_t kw = spec.kernel_w;
#pragma omp parallel for schedule(static) if (g.k * g.n * g.p > 65536)
  for (std::ptrdiff_t nn = 0; nn < samples; ++nn) {
    const auto n = static_cast<std::size_t>(nn);
    for (std::size_t p = 0; p < g.p; ++p) {
      const std::size_t oy = p / g.ow;
      const std::size_t ox = p % g.ow;
      const double* src = dcols + (n * g.p + p) * g.k;
      for (std::size_t c = 0; c < g.c; ++c) {
        double* plane = dx + ((n * g.c + c) * g.h + oy * spec.stride) * g.w + ox * spec.stride;
        for (std::size_t i = 0; i < spec.kernel_h; ++i) {
          double* dst = plane + i * g.w;
          for (std::size_t j = 0; j < kw; ++j) dst[j] += src[j];
          src += kw;
        }
      }
    }
  }
}

void conv_forward_impl(const Tensor& input, const ConvSpec& spec, const Tensor& weight,
                       const Tensor& bias, AlignedBuffer& cols, AlignedBuffer& ybuf,
                       Tensor& out) {
  check_conv_params(spec, weight, bias);
  const Shape in4 = as_batch4(input, "conv2d");
  const ConvGeometry g = conv_geometry(in4, spec);
  const std::size_t np = g.n * g.p;
  const std::size_t co = spec.out_channels;
  cols.resize(np * g.k);
  im2col(input.data(), g, spec, cols.data());

  ybuf.resize(np * co);
  ConstMatrixMap w(weight.data(), static_cast<Eigen::Index>(co), static_cast<Eigen::Index>(g.k));
  ConstMatrixMap x(cols.data(), static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(g.k));
  MatrixMap y(ybuf.data(), static_cast<Eigen::Index>(np), static_cast<Eigen::Index>(co));
  y.noalias() = x * w.transpose();

  out.resize(input.rank() == 4 ? Shape{g.n, co, g.oh, g.ow} : Shape{co, g.oh, g.ow});
  double* o = out.data();
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* src = ybuf.data() + n * g.p * co;
    double* dst = o + n * co * g.p;
    for (std::size_t c = 0; c < co; ++c) {
      const double b = bias[c];
      for (std::size_t p = 0; p < g.p; ++p) dst[c * g.p + p] = src[p * co + c] + b;
    }
  }
}

void check_linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (weight.rank() != 2) {
    shape_error("linear", "weights must have rank 2, got " + shape_string(weight.shape()));
  }
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0)) {
    shape_error("linear", "bias shape " + shape_string(bias.shape()) + " does not match " +
                              std::to_string(weight.dim(0)) + " outputs");
  }
  if (input.rank() != 1 && input.rank() != 2) {
    shape_error("linear", "input must have rank 1 or 2, got " + shape_string(input.shape()));
  }
  const std::size_t axis = input.rank() - 1;
  if (input.dim(axis) != weight.dim(1)) {
    shape_error("linear", axis_msg("input", axis, "features", input.dim(axis), weight.dim(1)));
  }
}

void linear_impl(const Tensor& input, const Tensor& weight, const Tensor& bias, Tensor& result) {
  check_linear(input, weight, bias);
  const std::size_t in = weight.dim(1);
  const std::size_t out = weight.dim(0);
  const std::size_t n = input.rank() == 2 ? input.dim(0) : 1;
  result.resize(input.rank() == 2 ? Shape{n, out} : Shape{out});
  ConstMatrixMap x(input.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
  ConstMatrixMap w(weight.data(), static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
  MatrixMap y(result.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(out));
  y.noalias() = x * w.transpose();
  Eigen::Map<const Eigen::RowVectorXd> b(bias.data(), static_cast<Eigen::Index>(out));
  y.rowwise() += b;
}

void check_recorded(bool recorded, const Shape& recorded_shape, const Tensor& input,
                    const char* op) {
  if (!recorded) shape_error(op, "backward called without a recorded forward");
  if (recorded_shape != input.shape()) {
    shape_error(op, "backward input shape " + shape_string(input.shape()) +
                        " differs from recorded forward shape " + shape_string(recorded_shape));
  }
}

}  // namespace

std::size_t ConvSpec::out_h(std::size_t in_h) const {
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (in_h < kernel_h) {
    throw std::invalid_argument("conv2d: height " + std::to_string(in_h) +
                                " smaller than kernel height " + std::to_string(kernel_h));
  }
  return (in_h - kernel_h) / stride + 1;
}

std::size_t ConvSpec::out_w(std::size_t in_w) const {
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (in_w < kernel_w) {
    throw std::invalid_argument("conv2d: width " + std::to_string(in_w) +
                                " smaller than kernel width " + std::to_string(kernel_w));
  }
  return (in_w - kernel_w) / stride + 1;
}

Tensor conv2d_forward(const Tensor& input, const ConvSpec& spec, const Tensor& weights,
                      const Tensor& bias) {
  AlignedBuffer cols, ybuf;
  Tensor out;
  conv_forward_impl(input, spec, weights, bias, cols, ybuf, out);
  return out;
}

Tensor linear(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  Tensor out;
  linear_impl(input, weights, bias, out);
  return out;
}

namespace {

void relu_into(const Tensor& input, Tensor& out) {
  out.resize(input.shape());
  const double* x = input.data();
  double* y = out.data();
  const auto n = static_cast<std::ptrdiff_t>(input.size());
#pragma omp parallel for simd schedule(static) if (n > 262144)
  for (std::ptrdiff_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

}  // namespace

Tensor relu(const Tensor& input) {
  Tensor out;
  relu_into(input, out);
  return out;
}

MaxPoolResult global_max_pool(const Tensor& input) {
  if (input.rank() != 3) {
    shape_error("global_max_pool", "input must be [C,H,W], got " + shape_string(input.shape()));
  }
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (h < 1 || w < 1) shape_error("global_max_pool", "spatial extents must be >= 1");
  MaxPoolResult result{Tensor({c}), {}};
  result.argmax.reserve(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* plane = input.data() + ch * h * w;
    std::size_t best = 0;
    for (std::size_t i = 1; i < h * w; ++i) {
      if (plane[i] > plane[best]) best = i;
    }
    result.pooled[ch] = plane[best];
    result.argmax.emplace_back(best / w, best % w);
  }
  return result;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(const ConvSpec& spec)
    : spec_(spec),
      weight_({spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w}),
      bias_({spec.out_channels}) {}

Conv2d::Conv2d(const ConvSpec& spec, Tensor weight, Tensor bias)
    : spec_(spec), weight_(std::move(weight)), bias_(std::move(bias)) {
  check_conv_params(spec_, weight_, bias_);
}

Tensor Conv2d::forward(const Tensor& input) {
  Tensor out;
  forward(input, out);
  return out;
}

void Conv2d::forward(const Tensor& input, Tensor& output) {
  conv_forward_impl(input, spec_, weight_, bias_, cols_, scratch_, output);
  recorded_input_ = input.shape();
  recorded_ = true;
}

Tensor Conv2d::infer(const Tensor& input) const {
  return conv2d_forward(input, spec_, weight_, bias_);
}

void Conv2d::clear_record() noexcept {
  recorded_ = false;
  cols_.clear();
  scratch_.clear();
  scratch_cols_.clear();
}

void Conv2d::backward(Tensor& input, const Tensor& output, bool propagate) {
  check_recorded(recorded_, recorded_input_, input, "conv2d");
  const ConvGeometry g = conv_geometry(as_batch4(input, "conv2d"), spec_);
  const std::size_t np = g.n * g.p;
  const std::size_t co = spec_.out_channels;
  if (output.size() != g.n * co * g.p) {
    shape_error("conv2d", "output gradient shape " + shape_string(output.shape()) +
                              " does not match the recorded forward");
  }

  // Upstream gradient as [N*P, Cout].
  scratch_.resize(np * co);
  const double* og = output.grad_data();
  for (std::size_t n = 0; n < g.n; ++n) {
    const double* src = og + n * co * g.p;
    double* dst = scratch_.data() + n * g.p * co;
    for (std::size_t c = 0; c < co; ++c) {
      for (std::size_t p = 0; p < g.p; ++p) dst[p * co + c] = src[c * g.p + p];
    }
  }
  const auto rows = static_cast<Eigen::Index>(np);
  const auto cout = static_cast<Eigen::Index>(co);
  const auto k = static_cast<Eigen::Index>(g.k);
  ConstMatrixMap grad(scratch_.data(), rows, cout);
  ConstMatrixMap x(cols_.data(), rows, k);
  MatrixMap dw(weight_.grad_data(), cout, k);
  dw.noalias() += grad.transpose() * x;
  Eigen::Map<Eigen::RowVectorXd> db(bias_.grad_data(), cout);
  db += grad.colwise().sum();

  if (propagate) {
    ConstMatrixMap w(weight_.data(), cout, k);
    scratch_cols_.resize(np * g.k);
    MatrixMap dcols(scratch_cols_.data(), rows, k);
    dcols.noalias() = grad * w;
    col2im(dcols.data(), g, spec_, input.grad_data());
  }
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in_features, std::size_t out_features)
    : weight_({out_features, in_features}), bias_({out_features}) {}

Linear::Linear(Tensor weight, Tensor bias) : weight_(std::move(weight)), bias_(std::move(bias)) {
  if (weight_.rank() != 2) {
    shape_error("linear", "weights must have rank 2, got " + shape_string(weight_.shape()));
  }
  if (bias_.rank() != 1 || bias_.dim(0) != weight_.dim(0)) {
    shape_error("linear", "bias shape " + shape_string(bias_.shape()) + " does not match " +
                              std::to_string(weight_.dim(0)) + " outputs");
  }
}

Tensor Linear::forward(const Tensor& input) {
  Tensor out;
  forward(input, out);
  return out;
}

void Linear::forward(const Tensor& input, Tensor& output) {
  linear_impl(input, weight_, bias_, output);
  recorded_input_ = input.shape();
  recorded_ = true;
}

Tensor Linear::infer(const Tensor& input) const { return linear(input, weight_, bias_); }

void Linear::backward(Tensor& input, const Tensor& output, bool propagate) {
  check_recorded(recorded_, recorded_input_, input, "linear");
  const auto in = static_cast<Eigen::Index>(weight_.dim(1));
  const auto out = static_cast<Eigen::Index>(weight_.dim(0));
  const auto n = static_cast<Eigen::Index>(input.rank() == 2 ? input.dim(0) : 1);
  if (output.size() != static_cast<std::size_t>(n * out)) {
    shape_error("linear", "output gradient shape " + shape_string(output.shape()) +
                              " does not match the recorded forward");
  }
  ConstMatrixMap x(input.data(), n, in);
  ConstMatrixMap grad(output.grad_data(), n, out);
  MatrixMap dw(weight_.grad_data(), out, in);
  dw.noalias() += grad.transpose() * x;
  Eigen::Map<Eigen::RowVectorXd> db(bias_.grad_data(), out);
  db += grad.colwise().sum();
  if (propagate) {
    ConstMatrixMap w(weight_.data(), out, in);
    MatrixMap dx(input.grad_data(), n, in);
    dx.noalias() += grad * w;
  }
}

// ---------------------------------------------------------------- Relu

Tensor Relu::forward(const Tensor& input) {
  Tensor out;
  forward(input, out);
  return out;
}

void Relu::forward(const Tensor& input, Tensor& output) {
  relu_into(input, output);
  recorded_input_ = input.shape();
  recorded_ = true;
}

void Relu::backward(Tensor& input, const Tensor& output) {
  check_recorded(recorded_, recorded_input_, input, "relu");
  const double* x = input.data();
  const double* g = output.grad_data();
  double* dx = input.grad_data();
  const std::size_t n = input.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > 0.0) dx[i] += g[i];
  }
}

// ---------------------------------------------------------------- GlobalMaxPool

namespace {

void max_pool_impl(const Tensor& input, std::vector<std::size_t>* argmax, Tensor& out) {
  if (input.rank() != 4) {
    shape_error("global_max_pool",
                "input must be [N,C,H,W], got " + shape_string(input.shape()));
  }
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (hw == 0) shape_error("global_max_pool", "spatial extents must be >= 1");
  out.resize({n, c});
  if (argmax != nullptr) argmax->assign(n * c, 0);
  for (std::size_t nc = 0; nc < n * c; ++nc) {
    const double* plane = input.data() + nc * hw;
    std::size_t best = 0;
    for (std::size_t i = 1; i < hw; ++i) {
      if (plane[i] > plane[best]) best = i;
    }
    out[nc] = plane[best];
    if (argmax != nullptr) (*argmax)[nc] = best;
  }
}

}  // namespace

Tensor GlobalMaxPool::forward(const Tensor& input) {
  Tensor out;
  forward(input, out);
  return out;
}

void GlobalMaxPool::forward(const Tensor& input, Tensor& output) {
  max_pool_impl(input, &argmax_, output);
  recorded_input_ = input.shape();
  recorded_ = true;
}

Tensor GlobalMaxPool::infer(const Tensor& input) const {
  Tensor out;
  max_pool_impl(input, nullptr, out);
  return out;
}

void GlobalMaxPool::backward(Tensor& input, const Tensor& output) {
  check_recorded(recorded_, recorded_input_, input, "global_max_pool");
  const std::size_t hw = input.dim(2) * input.dim(3);
  const double* g = output.grad_data();
  double* dx = input.grad_data();
  for (std::size_t nc = 0; nc < argmax_.size(); ++nc) dx[nc * hw + argmax_[nc]] += g[nc];
}

// ---------------------------------------------------------------- policy + losses

void PolicyDistribution::validate() const {
  if (probs.empty()) throw std::invalid_argument("policy: empty distribution");
  double sum = 0.0;
  for (double p : probs) {
    if (!(p > 0.0) || !std::isfinite(p)) {
      throw std::invalid_argument("policy: entries must be positive and finite");
    }
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("policy: probabilities sum to " + std::to_string(sum));
  }
}

PolicyDistribution softmax_temperature(std::span<const double> q, double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument("softmax_temperature: tau must be a positive finite scalar");
  }
  if (q.empty()) throw std::invalid_argument("softmax_temperature: empty q vector");
  double peak = -std::numeric_limits<double>::infinity();
  for (double v : q) {
    if (!std::isfinite(v)) throw std::invalid_argument("softmax_temperature: non-finite q value");
    peak = std::max(peak, v);
  }
  PolicyDistribution dist;
  dist.probs.resize(q.size());
  double total = 0.0;
  for (std::size_t a = 0; a < q.size(); ++a) {
    dist.probs[a] = std::exp((q[a] - peak) / tau);
    total += dist.probs[a];
  }
  for (double& p : dist.probs) p /= total;
  // exp underflow can produce exact zeros for very sharp policies.
  for (double& p : dist.probs) p = std::max(p, std::numeric_limits<double>::min());
  return dist;
}

double kl_divergence(const PolicyDistribution& p, const PolicyDistribution& q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("kl_divergence: length mismatch " + std::to_string(p.size()) +
                                " vs " + std::to_string(q.size()));
  }
  double kl = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (p[a] > 0.0) kl += p[a] * (std::log(p[a]) - std::log(q[a]));
  }
  return kl;
}

KlLoss kl_softmax_loss(const PolicyDistribution& target, std::span<const double> logits,
                       double tau) {
  const PolicyDistribution student = softmax_temperature(logits, tau);
  KlLoss out;
  out.loss = kl_divergence(target, student);
  out.grad_logits.resize(logits.size());
  for (std::size_t a = 0; a < logits.size(); ++a) {
    out.grad_logits[a] = (student[a] - target[a]) / tau;
  }
  return out;
}

void rmsprop_step(std::span<double> params, std::span<const double> grads,
                  std::span<double> state, const RmsPropConfig& config) {
  if (params.size() != grads.size() || params.size() != state.size()) {
    throw std::invalid_argument("rmsprop_step: params/grads/state sizes differ");
  }
  const double decay = config.decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state[i] = decay * state[i] + (1.0 - decay) * g * g;
    params[i] -= config.lr * g / std::sqrt(state[i] + config.epsilon);
  }
}

void RmsProp::step(std::span<Tensor* const> params) {
  if (state_.empty()) {
    state_.reserve(params.size());
    for (const Tensor* t : params) state_.emplace_back(t->size(), 0.0);
  }
  if (state_.size() != params.size()) {
    throw std::invalid_argument("rmsprop: parameter list changed between steps");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    rmsprop_step(params[i]->values(), params[i]->grad(), state_[i], config_);
  }
}

HuberResult huber_loss(double pred, double target, double delta) {
  const double err = pred - target;
  const double mag = std::abs(err);
  if (mag <= delta) return {0.5 * err * err, err};
  return {delta * (mag - 0.5 * delta), err > 0.0 ? delta : -delta};
}

}  // namespace rldc
