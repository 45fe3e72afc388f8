#include "rldc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <numeric>
#include <span>

#include "rldc/distill.hpp"
#include "rldc/dqn.hpp"
#include "rldc/kernels.hpp"
#include "rldc/network.hpp"
#include "rldc/rng.hpp"

namespace rldc {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

namespace {

constexpr double h = kGradcheckStep;

void randomize(std::span<double> v, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  for (double& x : v) x = rng.uniform(lo, hi);
}

// Values bounded away from zero so ReLU kinks stay outside the stencil.
void randomize_off_zero(std::span<double> v, SplitMix64& rng) {
  for (double& x : v) {
    const double mag = rng.uniform(0.05, 1.0);
    x = rng.next_double() < 0.5 ? -mag : mag;
  }
}

// Compares `analytic` with central differences of `loss` over `values`.
template <typename Loss>
void compare(GradcheckCase& c, std::span<double> values, std::vector<double> analytic, Loss&& loss) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + h;
    const double fp = loss();
    values[i] = saved - h;
    const double fm = loss();
    values[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    c.max_rel_error = std::max(c.max_rel_error, relative_error(analytic[i], numeric));
    ++c.entries;
  }
}

std::vector<double> copy(std::span<const double> s) { return {s.begin(), s.end()}; }

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

GradcheckCase check_conv(SplitMix64& rng, std::size_t instances) {
  GradcheckCase c{"conv2d"};
  for (std::size_t t = 0; t < instances; ++t) {
    ConvSpec spec;
    spec.in_channels = 1 + rng.uniform_index(3);
    spec.out_channels = 1 + rng.uniform_index(3);
    spec.kernel_h = 1 + rng.uniform_index(4);
    spec.kernel_w = 1 + rng.uniform_index(4);
    spec.stride = 1 + rng.uniform_index(3);
    const std::size_t n = 1 + rng.uniform_index(2);
    const std::size_t ih = spec.kernel_h + rng.uniform_index(5);
    const std::size_t iw = spec.kernel_w + rng.uniform_index(5);
    Conv2d conv(spec);
    randomize(conv.weight().values(), rng);
    randomize(conv.bias().values(), rng);
    Tensor in({n, spec.in_channels, ih, iw});
    randomize(in.values(), rng);
    Tensor out = conv.forward(in);
    std::vector<double> r(out.size());
    randomize(r, rng);
    std::copy(r.begin(), r.end(), out.grad().begin());
    conv.weight().zero_grad();
    conv.bias().zero_grad();
    in.zero_grad();
    conv.backward(in, out, true);
    auto loss = [&] { return dot(conv.infer(in).values(), r); };
    compare(c, in.values(), copy(in.grad()), loss);
    compare(c, conv.weight().values(), copy(conv.weight().grad()), loss);
    compare(c, conv.bias().values(), copy(conv.bias().grad()), loss);
    ++c.instances;
  }
  return c;
}

GradcheckCase check_linear(SplitMix64& rng, std::size_t instances) {
  GradcheckCase c{"linear"};
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t in_f = 1 + rng.uniform_index(6), out_f = 1 + rng.uniform_index(5);
    const std::size_t n = 1 + rng.uniform_index(3);
    Linear fc(in_f, out_f);
    randomize(fc.weight().values(), rng);
    randomize(fc.bias().values(), rng);
    Tensor in({n, in_f});
    randomize(in.values(), rng);
    Tensor out = fc.forward(in);
    std::vector<double> r(out.size());
    randomize(r, rng);
    std::copy(r.begin(), r.end(), out.grad().begin());
    fc.weight().zero_grad();
    fc.bias().zero_grad();
    fc.backward(in, out, true);
    auto loss = [&] { return dot(fc.infer(in).values(), r); };
    compare(c, in.values(), copy(in.grad()), loss);
    compare(c, fc.weight().values(), copy(fc.weight().grad()), loss);
    compare(c, fc.bias().values(), copy(fc.bias().grad()), loss);
    ++c.instances;
  }
  return c;
}

GradcheckCase check_relu(SplitMix64& rng, std::size_t instances) {
  GradcheckCase c{"relu"};
  for (std::size_t t = 0; t < instances; ++t) {
    Tensor in({1 + rng.uniform_index(3), 1 + rng.uniform_index(8)});
    randomize_off_zero(in.values(), rng);
    Relu layer;
    Tensor out = layer.forward(in);
    std::vector<double> r(out.size());
    randomize(r, rng);
    std::copy(r.begin(), r.end(), out.grad().begin());
    layer.backward(in, out);
    auto loss = [&] { return dot(relu(in).values(), r); };
    compare(c, in.values(), copy(in.grad()), loss);
    ++c.instances;
  }
  return c;
}

GradcheckCase check_max_pool(SplitMix64& rng, std::size_t instances) {
  GradcheckCase c{"global_max_pool"};
  for (std::size_t t = 0; t < instances; ++t) {
    Tensor in({1 + rng.uniform_index(2), 1 + rng.uniform_index(3), 1 + rng.uniform_index(4),
               1 + rng.uniform_index(4)});
    // A shuffled grid of levels 0.01 apart: no ties within the stencil.
    std::vector<double> levels(in.size());
    for (std::size_t i = 0; i < levels.size(); ++i) levels[i] = 0.01 * static_cast<double>(i);
    for (std::size_t i = levels.size(); i > 1; --i) std::swap(levels[i - 1], levels[rng.uniform_index(i)]);
    std::copy(levels.begin(), levels.end(), in.values().begin());
    GlobalMaxPool pool;
    Tensor out = pool.forward(in);
    std::vector<double> r(out.size());
    randomize(r, rng);
    std::copy(r.begin(), r.end(), out.grad().begin());
    pool.backward(in, out);
    auto loss = [&] { return dot(pool.infer(in).values(), r); };
    compare(c, in.values(), copy(in.grad()), loss);
    ++c.instances;
  }
  return c;
}

GradcheckCase check_softmax_kl(SplitMix64& rng, std::size_t instances) {
  GradcheckCase c{"softmax_kl"};
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t a = 2 + rng.uniform_index(8);
    const double tau = rng.uniform(0.3, 2.0);
    std::vector<double> target_q(a), logits(a);
    randomize(target_q, rng, -2.0, 2.0);
    randomize(logits, rng, -2.0, 2.0);
    const PolicyDistribution target = softmax_temperature(target_q, rng.uniform(0.3, 2.0));
    const KlLoss kl = kl_softmax_loss(target, logits, tau);
    auto loss = [&] { return kl_softmax_loss(target, logits, tau).loss; };
    compare(c, logits, kl.grad_logits, loss);
    ++c.instances;
  }
  return c;
}

GradcheckCase check_huber(SplitMix64& rng, std::size_t instances) {
  GradcheckCase c{"huber"};
  for (std::size_t t = 0; t < instances; ++t) {
    const double delta = rng.uniform(0.5, 2.0);
    std::vector<double> pred(8);
    const double target = rng.uniform(-2.0, 2.0);
    // Residuals kept at least 1e-3 away from the quadratic/linear seam.
    for (double& p : pred) {
      double d;
      do {
        d = rng.uniform(-3.0, 3.0);
      } while (std::abs(std::abs(d) - delta) < 1e-3);
      p = target + d;
    }
    std::vector<double> analytic(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) analytic[i] = huber_loss(pred[i], target, delta).grad;
    auto loss = [&] {
      double s = 0.0;
      for (double p : pred) s += huber_loss(p, target, delta).loss;
      return s;
    };
    compare(c, pred, analytic, loss);
    ++c.instances;
  }
  return c;
}

NetworkSpec tiny_spec(Tail tail, SplitMix64& rng) {
  NetworkSpec spec;
  spec.input = {2, 7, 7};
  spec.conv_layers = {{2, 3, 3, 3, 1 + rng.uniform_index(2)}, {3, 2, 2, 2, 1}};
  spec.tail = tail;
  spec.hidden = rng.next_double() < 0.5 ? 0 : 4;
  spec.actions = 3;
  return spec;
}

// Smallest distance of any ReLU input from zero, or of any positive channel
// maximum from its runner-up, over the batch. Instances are resampled until
// this exceeds kKinkMargin so no +-h stencil can cross a switch point.
constexpr double kKinkMargin = 1e-3;

double kink_margin(const Network& net, const Tensor& states) {
  const NetworkSpec& spec = net.spec();
  const auto params = net.parameters();
  auto param = [&](const std::string& name) -> const Tensor& {
    for (const NamedConstParam& p : params) {
      if (p.name == name) return *p.tensor;
    }
    throw std::logic_error("gradcheck: missing parameter " + name);
  };
  auto min_abs = [](const Tensor& t) {
    double m = std::numeric_limits<double>::infinity();
    for (double v : t.values()) m = std::min(m, std::abs(v));
    return m;
  };
  double margin = std::numeric_limits<double>::infinity();
  const std::size_t per = states.size() / states.dim(0);
  for (std::size_t n = 0; n < states.dim(0); ++n) {
    Tensor x({spec.input.frames, spec.input.height, spec.input.width});
    std::copy(states.data() + n * per, states.data() + (n + 1) * per, x.data());
    for (std::size_t i = 0; i < spec.conv_layers.size(); ++i) {
      const std::string base = "conv" + std::to_string(i);
      const Tensor y = conv2d_forward(x, spec.conv_layers[i], param(base + ".weight"), param(base + ".bias"));
      margin = std::min(margin, min_abs(y));
      x = relu(y);
    }
    if (spec.tail == Tail::max_pool) {
      const std::size_t hw = x.dim(1) * x.dim(2);
      for (std::size_t c = 0; c < x.dim(0); ++c) {
        std::vector<double> v(x.data() + c * hw, x.data() + (c + 1) * hw);
        std::sort(v.rbegin(), v.rend());
        if (v[0] > 0.0 && v.size() > 1) margin = std::min(margin, v[0] - v[1]);
      }
    }
    if (spec.hidden > 0) {
      const Tensor feat = spec.tail == Tail::max_pool ? global_max_pool(x).pooled : x.reshaped({x.size()});
      margin = std::min(margin, min_abs(linear(feat, param("fc0.weight"), param("fc0.bias"))));
    }
  }
  return margin;
}

// Draws a tiny network and a batch of states clear of every kink.
std::pair<Network, Tensor> sample_smooth(const NetworkSpec& spec, SplitMix64& rng) {
  for (;;) {
    Network net = Network::build(spec, rng.next());
    // O(1) weights keep the losses, and so the gradients, well above the
    // rounding floor of the difference quotient; nonzero biases keep dead
    // units off the kink.
    for (const NamedParam& p : net.parameters()) randomize(p.tensor->values(), rng, -0.5, 0.5);
    Tensor states({2, spec.input.frames, spec.input.height, spec.input.width});
    randomize(states.values(), rng, 0.0, 1.0);
    if (kink_margin(net, states) > kKinkMargin) return {std::move(net), std::move(states)};
  }
}

void check_network_params(GradcheckCase& c, Network& net, const auto& loss) {
  std::vector<std::vector<double>> analytic;
  for (const NamedParam& p : net.parameters()) analytic.push_back(copy(p.tensor->grad()));
  auto params = net.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    compare(c, params[k].tensor->values(), analytic[k], loss);
  }
}

GradcheckCase check_q_network(SplitMix64& rng, std::size_t instances) {
  GradcheckCase c{"network_q_learning"};
  for (std::size_t t = 0; t < instances; ++t) {
    const NetworkSpec spec = tiny_spec(t % 2 == 0 ? Tail::max_pool : Tail::flatten, rng);
    auto [net, states] = sample_smooth(spec, rng);
    const std::size_t n = states.dim(0);
    std::vector<int> actions(n);
    std::vector<double> targets(n);
    for (std::size_t i = 0; i < n; ++i) {
      actions[i] = static_cast<int>(rng.uniform_index(spec.actions));
      targets[i] = rng.uniform(-1.5, 1.5);
    }
    auto loss_and_grad = [&](std::vector<double>* grad) {
      const Tensor& q = net.forward_batch(states);
      double loss = 0.0;
      if (grad) grad->assign(q.size(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const HuberResult hr = huber_loss(q[i * spec.actions + actions[i]], targets[i]);
        loss += hr.loss / static_cast<double>(n);
        if (grad) (*grad)[i * spec.actions + actions[i]] = hr.grad / static_cast<double>(n);
      }
      return loss;
    };
    std::vector<double> grad;
    loss_and_grad(&grad);
    net.zero_grad();
    net.backward(grad);
    check_network_params(c, net, [&] { return loss_and_grad(nullptr); });
    ++c.instances;
  }
  return c;
}

GradcheckCase check_distill_network(SplitMix64& rng, std::size_t instances) {
  GradcheckCase c{"network_distill_kl"};
  for (std::size_t t = 0; t < instances; ++t) {
    const NetworkSpec spec = tiny_spec(t % 2 == 0 ? Tail::max_pool : Tail::flatten, rng);
    auto [student, states] = sample_smooth(spec, rng);
    Network expert = Network::build(tiny_spec(Tail::flatten, rng), rng.next());
    for (Tensor* p : expert.parameter_tensors()) randomize(p->values(), rng);
    DistillConfig cfg;
    cfg.tau_expert = rng.uniform(0.5, 2.0);
    cfg.tau_student = rng.uniform(0.5, 2.0);
    distill_loss_and_grad(student, expert, states, cfg);
    check_network_params(c, student, [&] {
      // Recomputing the gradient is wasted work but keeps one code path.
      return distill_loss_and_grad(student, expert, states, cfg);
    });
    ++c.instances;
  }
  return c;
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, std::size_t instances) {
  SplitMix64 rng(seed);
  GradcheckReport report;
  report.cases.push_back(check_conv(rng, instances));
  report.cases.push_back(check_linear(rng, instances));
  report.cases.push_back(check_relu(rng, instances));
  report.cases.push_back(check_max_pool(rng, instances));
  report.cases.push_back(check_softmax_kl(rng, instances));
  report.cases.push_back(check_huber(rng, instances));
  report.cases.push_back(check_q_network(rng, instances));
  report.cases.push_back(check_distill_network(rng, instances));
  for (const GradcheckCase& c : report.cases) {
    report.max_rel_error = std::max(report.max_rel_error, c.max_rel_error);
  }
  return report;
}

}  // namespace rldc
