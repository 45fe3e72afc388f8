#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rldc/kernels.hpp"
#include "rldc/tensor.hpp"

namespace rldc {

enum class Width { same, halved };
enum class Tail { max_pool, flatten };

std::string to_string(Width width);
std::string to_string(Tail tail);
Width parse_width(const std::string& s);
Tail parse_tail(const std::string& s);

struct InputShape {
  std::size_t frames = 4;
  std::size_t height = 44;
  std::size_t width = 44;
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

/// Declarative Q-network description.
///
/// The four ablation cells are produced by NetworkSpec::dqn(); custom specs
/// (any conv list, optional hidden layer) are allowed for tests.
struct NetworkSpec {
  InputShape input;
  std::vector<ConvSpec> conv_layers;
  Width width = Width::same;
  Tail tail = Tail::flatten;
  std::size_t hidden = 512;  // 0 = no hidden layer
  std::size_t actions = 3;

  // DQN conv stack (8/4, 4/2, 3/1) with channels 32-64-64 or 16-32-32.
  static NetworkSpec dqn(Width width, Tail tail, InputShape input, std::size_t actions,
                         std::size_t hidden = 512);

  // Throws when the conv stack does not fit the input or counts are zero.
  void validate() const;
  // [C, H', W'] of the last conv layer (the input itself without conv layers).
  Shape final_conv_shape() const;
  // Input extent of the first fully connected layer.
  std::size_t tail_extent() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

// Architecture names used on the command line: expert, max-same,
// max-halved, none-halved (and none-same as an alias of expert).
NetworkSpec arch_spec(const std::string& arch, InputShape input, std::size_t actions,
                      std::size_t hidden = 512);
std::string arch_name(Width width, Tail tail);

// Closed-form parameter count.
std::size_t count_params(const NetworkSpec& spec);

struct ActivationRecord {
  Tensor pre_pool_maps;  // [C, H', W'] post-ReLU output of the last conv layer
  Tensor q_values;       // [A]
};

struct NamedParam {
  std::string name;
  Tensor* tensor;
};

struct NamedConstParam {
  std::string name;
  const Tensor* tensor;
};

class Network {
 public:
  // Fan-in uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases.
  static Network build(const NetworkSpec& spec, std::uint64_t init_seed);

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::size_t num_actions() const noexcept { return spec_.actions; }

  // Single-observation forward; does not touch the training tape, so a
  // const Network can be shared across evaluation threads.
  ActivationRecord forward(const Tensor& observation, bool capture = false) const;
  // Fully connected head applied to last-conv activations [C,H',W'].
  Tensor head_forward(const Tensor& pre_pool_maps) const;

  // Batched forward [N, frames, H, W] -> [N, A] recording the tape.
  const Tensor& forward_batch(const Tensor& batch);
  // Back-propagates d loss / d q (shape [N, A]) into parameter gradients.
  void backward(std::span<const double> grad_q);

  std::vector<NamedParam> parameters();
  std::vector<NamedConstParam> parameters() const;
  std::vector<Tensor*> parameter_tensors();
  std::size_t parameter_count() const;
  void zero_grad();
  double grad_norm() const;

  // Bit-copies weights from a network with the same spec.
  void copy_weights_from(const Network& other);

 private:
  explicit Network(NetworkSpec spec);
  void check_observation(const Tensor& obs, std::size_t rank_expected) const;

  NetworkSpec spec_;
  std::vector<Conv2d> convs_;
  std::vector<Relu> conv_relus_;
  GlobalMaxPool pool_;
  std::vector<Linear> fcs_;  // hidden (optional) then output
  Relu hidden_relu_;

  // Tape from the last forward_batch.
  std::vector<Tensor> acts_;  // input, then conv/relu outputs, tail, fc outputs
  bool taped_ = false;
};

}  // namespace rldc
