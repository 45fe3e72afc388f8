#include "rldc/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rldc/rng.hpp"

namespace rldc {

std::string to_string(Width width) { return width == Width::same ? "same" : "halved"; }
std::string to_string(Tail tail) { return tail == Tail::max_pool ? "max" : "none"; }

Width parse_width(const std::string& s) {
  if (s == "same") return Width::same;
  if (s == "halved") return Width::halved;
  throw std::invalid_argument("unknown width '" + s + "' (expected same or halved)");
}

Tail parse_tail(const std::string& s) {
  if (s == "max" || s == "max_pool") return Tail::max_pool;
  if (s == "none" || s == "flatten") return Tail::flatten;
  throw std::invalid_argument("unknown tail '" + s + "' (expected max or none)");
}

NetworkSpec NetworkSpec::dqn(Width width, Tail tail, InputShape input, std::size_t actions,
                             std::size_t hidden) {
  const std::size_t div = width == Width::same ? 1 : 2;
  NetworkSpec spec;
  spec.input = input;
  spec.width = width;
  spec.tail = tail;
  spec.hidden = hidden;
  spec.actions = actions;
  spec.conv_layers = {
      {input.frames, 32 / div, 8, 8, 4},
      {32 / div, 64 / div, 4, 4, 2},
      {64 / div, 64 / div, 3, 3, 1},
  };
  return spec;
}

void NetworkSpec::validate() const {
  if (input.frames < 1 || input.height < 1 || input.width < 1) {
    throw std::invalid_argument("network: input extents must be >= 1");
  }
  if (actions < 1) throw std::invalid_argument("network: need at least one action");
  std::size_t channels = input.frames, h = input.height, w = input.width;
  for (std::size_t i = 0; i < conv_layers.size(); ++i) {
    const ConvSpec& c = conv_layers[i];
    if (c.in_channels != channels) {
      throw std::invalid_argument("network: conv layer " + std::to_string(i) + " expects " +
                                  std::to_string(c.in_channels) + " input channels, got " +
                                  std::to_string(channels));
    }
    if (c.out_channels < 1 || c.kernel_h < 1 || c.kernel_w < 1 || c.stride < 1) {
      throw std::invalid_argument("network: conv layer " + std::to_string(i) +
                                  " has a zero extent");
    }
    if (h < c.kernel_h || w < c.kernel_w) {
      throw std::invalid_argument("network: input " + std::to_string(input.height) + "x" +
                                  std::to_string(input.width) + " too small for conv layer " +
                                  std::to_string(i) + " (its input would be " +
                                  std::to_string(h) + "x" + std::to_string(w) + ")");
    }
    h = c.out_h(h);
    w = c.out_w(w);
    channels = c.out_channels;
  }
}

Shape NetworkSpec::final_conv_shape() const {
  validate();
  std::size_t c = input.frames, h = input.height, w = input.width;
  for (const ConvSpec& layer : conv_layers) {
    h = layer.out_h(h);
    w = layer.out_w(w);
    c = layer.out_channels;
  }
  return {c, h, w};
}

std::size_t NetworkSpec::tail_extent() const {
  const Shape s = final_conv_shape();
  return tail == Tail::max_pool ? s[0] : s[0] * s[1] * s[2];
}

NetworkSpec arch_spec(const std::string& arch, InputShape input, std::size_t actions,
                      std::size_t hidden) {
  if (arch == "expert" || arch == "none-same") {
    return NetworkSpec::dqn(Width::same, Tail::flatten, input, actions, hidden);
  }
  if (arch == "max-same") return NetworkSpec::dqn(Width::same, Tail::max_pool, input, actions, hidden);
  if (arch == "max-halved") {
    return NetworkSpec::dqn(Width::halved, Tail::max_pool, input, actions, hidden);
  }
  if (arch == "none-halved") {
    return NetworkSpec::dqn(Width::halved, Tail::flatten, input, actions, hidden);
  }
  throw std::invalid_argument("unknown arch '" + arch +
                              "' (expected expert, max-same, max-halved or none-halved)");
}

std::string arch_name(Width width, Tail tail) {
  if (width == Width::same && tail == Tail::flatten) return "expert";
  return to_string(tail) + "-" + to_string(width);
}

std::size_t count_params(const NetworkSpec& spec) {
  std::size_t total = 0;
  for (const ConvSpec& c : spec.conv_layers) total += c.weight_count() + c.out_channels;
  std::size_t in = spec.tail_extent();
  if (spec.hidden > 0) {
    total += in * spec.hidden + spec.hidden;
    in = spec.hidden;
  }
  total += in * spec.actions + spec.actions;
  return total;
}

// ---------------------------------------------------------------- Network

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  for (const ConvSpec& c : spec_.conv_layers) {
    convs_.emplace_back(c);
    conv_relus_.emplace_back();
  }
  std::size_t in = spec_.tail_extent();
  if (spec_.hidden > 0) {
    fcs_.emplace_back(in, spec_.hidden);
    in = spec_.hidden;
  }
  fcs_.emplace_back(in, spec_.actions);
}

Network Network::build(const NetworkSpec& spec, std::uint64_t init_seed) {
  Network net(spec);
  SplitMix64 rng(init_seed);
  auto init = [&rng](Tensor& weight, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : weight.values()) v = rng.uniform(-bound, bound);
  };
  for (Conv2d& conv : net.convs_) {
    const ConvSpec& c = conv.spec();
    init(conv.weight(), c.in_channels * c.kernel_h * c.kernel_w);
  }
  for (Linear& fc : net.fcs_) init(fc.weight(), fc.in_features());
  return net;
}

void Network::check_observation(const Tensor& obs, std::size_t rank_expected) const {
  const Shape want = rank_expected == 3
                         ? Shape{spec_.input.frames, spec_.input.height, spec_.input.width}
                         : Shape{obs.rank() == 4 ? obs.dim(0) : 0, spec_.input.frames,
                                 spec_.input.height, spec_.input.width};
  if (obs.shape() != want) {
    throw std::invalid_argument("network: observation shape " + shape_string(obs.shape()) +
                                " does not match expected " + shape_string(want));
  }
}

ActivationRecord Network::forward(const Tensor& observation, bool capture) const {
  check_observation(observation, 3);
  Tensor x = observation;
  for (const Conv2d& conv : convs_) x = relu(conv.infer(x));
  ActivationRecord record;
  record.q_values = head_forward(x);
  if (capture) record.pre_pool_maps = std::move(x);
  return record;
}

Tensor Network::head_forward(const Tensor& maps) const {
  const Shape want = spec_.final_conv_shape();
  if (maps.shape() != want) {
    throw std::invalid_argument("network: pre-pool maps shape " + shape_string(maps.shape()) +
                                " does not match " + shape_string(want));
  }
  Tensor x = spec_.tail == Tail::max_pool
                 ? pool_.infer(maps.reshaped({1, want[0], want[1], want[2]})).reshaped({want[0]})
                 : maps.reshaped({maps.size()});
  for (std::size_t i = 0; i < fcs_.size(); ++i) {
    x = fcs_[i].infer(x);
    if (i + 1 < fcs_.size()) x = relu(x);
  }
  return x;
}

const Tensor& Network::forward_batch(const Tensor& batch) {
  check_observation(batch, 4);
  const std::size_t n = batch.dim(0);
  const std::size_t slots = 1 + 2 * convs_.size() + 1 + (2 * fcs_.size() - 1);
  if (acts_.size() != slots) acts_.assign(slots, Tensor());
  std::size_t k = 0;
  acts_[k].resize(batch.shape());
  std::copy(batch.values().begin(), batch.values().end(), acts_[k].values().begin());
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].forward(acts_[k], acts_[k + 1]);
    conv_relus_[i].forward(acts_[k + 1], acts_[k + 2]);
    k += 2;
  }
  if (spec_.tail == Tail::max_pool) {
    pool_.forward(acts_[k], acts_[k + 1]);
  } else {
    acts_[k + 1].resize({n, acts_[k].size() / n});
    std::copy(acts_[k].values().begin(), acts_[k].values().end(), acts_[k + 1].values().begin());
  }
  ++k;
  for (std::size_t i = 0; i < fcs_.size(); ++i) {
    fcs_[i].forward(acts_[k], acts_[k + 1]);
    ++k;
    if (i + 1 < fcs_.size()) {
      hidden_relu_.forward(acts_[k], acts_[k + 1]);
      ++k;
    }
  }
  taped_ = true;
  return acts_.back();
}

void Network::backward(std::span<const double> grad_q) {
  if (!taped_) throw std::logic_error("network: backward without a recorded forward_batch");
  Tensor& q = acts_.back();
  if (grad_q.size() != q.size()) {
    throw std::invalid_argument("network: grad_q has " + std::to_string(grad_q.size()) +
                                " entries, expected " + std::to_string(q.size()));
  }
  std::copy(grad_q.begin(), grad_q.end(), q.grad().begin());

  std::size_t idx = acts_.size() - 1;
  for (std::size_t i = fcs_.size(); i-- > 0;) {
    if (i + 1 < fcs_.size()) {
      hidden_relu_.backward(acts_[idx - 1], acts_[idx]);
      --idx;
    }
    fcs_[i].backward(acts_[idx - 1], acts_[idx]);
    --idx;
  }
  // idx now points at the tail tensor.
  Tensor& tail = acts_[idx];
  Tensor& maps = acts_[idx - 1];
  if (spec_.tail == Tail::max_pool) {
    pool_.backward(maps, tail);
  } else {
    std::transform(maps.grad().begin(), maps.grad().end(), tail.grad().begin(),
                   maps.grad().begin(), std::plus<>());
  }
  --idx;
  for (std::size_t i = convs_.size(); i-- > 0;) {
    conv_relus_[i].backward(acts_[idx - 1], acts_[idx]);
    --idx;
    convs_[i].backward(acts_[idx - 1], acts_[idx], /*propagate=*/i > 0);
    --idx;
  }
  taped_ = false;
}

std::vector<NamedParam> Network::parameters() {
  std::vector<NamedParam> out;
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    out.push_back({"conv" + std::to_string(i) + ".weight", &convs_[i].weight()});
    out.push_back({"conv" + std::to_string(i) + ".bias", &convs_[i].bias()});
  }
  for (std::size_t i = 0; i < fcs_.size(); ++i) {
    out.push_back({"fc" + std::to_string(i) + ".weight", &fcs_[i].weight()});
    out.push_back({"fc" + std::to_string(i) + ".bias", &fcs_[i].bias()});
  }
  return out;
}

std::vector<NamedConstParam> Network::parameters() const {
  std::vector<NamedConstParam> out;
  for (const NamedParam& p : const_cast<Network*>(this)->parameters()) {
    out.push_back({p.name, p.tensor});
  }
  return out;
}

std::vector<Tensor*> Network::parameter_tensors() {
  std::vector<Tensor*> out;
  for (const NamedParam& p : parameters()) out.push_back(p.tensor);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const NamedConstParam& p : parameters()) total += p.tensor->size();
  return total;
}

void Network::zero_grad() {
  for (Tensor* t : parameter_tensors()) t->zero_grad();
}

double Network::grad_norm() const {
  double sq = 0.0;
  for (const NamedConstParam& p : parameters()) {
    for (double g : p.tensor->grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

void Network::copy_weights_from(const Network& other) {
  if (!(other.spec_ == spec_)) {
    throw std::invalid_argument("network: cannot copy weights between different specs");
  }
  auto dst = parameters();
  auto src = other.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    std::copy(src[i].tensor->values().begin(), src[i].tensor->values().end(),
              dst[i].tensor->values().begin());
  }
}

}  // namespace rldc
