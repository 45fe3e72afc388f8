#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "rldc/checkpoint.hpp"
#include "rldc/env.hpp"
#include "rldc/evaluation.hpp"
#include "rldc/kernels.hpp"
#include "rldc/network.hpp"
#include "rldc/replay.hpp"

namespace rldc {

/// Q-learning hyperparameters. One iteration is one environment step; from
/// learn_start on, every iteration also takes one gradient step.
struct DqnConfig {
  double gamma = 0.99;
  RmsPropConfig optimizer{};
  double huber_delta = 1.0;
  std::size_t batch_size = 32;
  std::size_t replay_capacity = 50'000;
  std::size_t learn_start = 1'000;
  std::size_t target_sync = 1'000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.1;
  double epsilon_decay_fraction = 0.1;  // of train_iterations
  std::size_t train_iterations = 50'000;
  std::size_t eval_interval = 2'000;
  std::size_t eval_episodes = 100;  // 10 is too coarse to rank checkpoints at eps 0.05
  std::size_t final_episodes = 100;
  double eval_epsilon = 0.05;

  void validate() const;
};

// Piecewise-linear, clamped at epsilon_end.
double epsilon_at(const DqnConfig& config, std::size_t iteration);

// y = r for terminal transitions, else r + gamma * max_a' Q_target(s', a').
std::vector<double> q_targets(Network& target, std::span<const Transition* const> batch,
                              double gamma);

// Mean Huber loss of Q_online(s, a) against q_targets; applies one optimizer
// step to `online` and returns the loss before the step.
double q_learning_step(Network& online, Network& target, std::span<const Transition* const> batch,
                       const DqnConfig& config, RmsProp& optimizer);

void sync_target(const Network& online, Network& target);

// Copies the batch's states (or next states) into a [N, frames, H, W] tensor.
void gather_states(std::span<const Transition* const> batch, bool next, Tensor& out);

struct TrainResult {
  Checkpoint best;
  std::size_t best_iter = 0;
  EvalLog log;
  std::vector<double> final_rewards;
  Summary final_summary;
  std::vector<double> loss_trace;  // one entry per gradient step
};

using RowCallback = std::function<void(const EvalRow&)>;

TrainResult train_expert(const EnvConfig& env, const NetworkSpec& spec, const DqnConfig& config,
                         std::uint64_t seed, const RowCallback& on_row = {});

// Shared protocol pieces used by both trainers.
namespace protocol {
std::vector<double> periodic_eval(const Network& net, const EnvConfig& env, std::size_t episodes,
                                  double epsilon, std::uint64_t seed);
std::vector<double> final_eval(const Network& net, const EnvConfig& env, std::size_t episodes,
                               double epsilon, std::uint64_t seed);
// Episode seed for the n-th training episode.
std::uint64_t train_episode_seed(std::uint64_t seed, std::size_t episode);
}  // namespace protocol

}  // namespace rldc
