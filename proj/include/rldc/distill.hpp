#pragma once

#include <cstdint>
#include <span>

#include "rldc/dqn.hpp"

namespace rldc {

/// Policy distillation hyperparameters. Iterations count environment steps
/// taken by the student, with one gradient step each from learn_start on.
struct DistillConfig {
  double tau_expert = 1.0;
  double tau_student = 1.0;
  RmsPropConfig optimizer{};
  std::size_t batch_size = 32;
  std::size_t replay_capacity = 50'000;
  std::size_t learn_start = 1'000;
  std::size_t train_iterations = 100'000;
  std::size_t eval_interval = 2'000;
  std::size_t eval_episodes = 100;  // 10 is too coarse to rank checkpoints at eps 0.05
  std::size_t final_episodes = 100;
  double eval_epsilon = 0.05;

  void validate() const;
};

PolicyDistribution expert_policy(const Network& expert, const Observation& observation, double tau);

// Inverse CDF over softmax(Q_S / tau) with a single uniform draw.
int sample_student_action(const Network& student, const Observation& observation, double tau,
                          SplitMix64& rng);
// Same rule applied to an explicit distribution (exposed for tests).
int sample_from(const PolicyDistribution& policy, double u);

// Mean over the batch of KL(pi_E || pi_S) with gradients accumulated into the
// student's parameter gradients (zeroed first). The student is not updated.
double distill_loss_and_grad(Network& student, Network& expert, const Tensor& states,
                             const DistillConfig& config);

// distill_loss_and_grad followed by one optimizer step on the student.
double distill_step(Network& student, Network& expert, const Tensor& states,
                    const DistillConfig& config, RmsProp& optimizer);

TrainResult train_student(const Checkpoint& expert, const NetworkSpec& student_spec,
                          const EnvConfig& env, const DistillConfig& config, std::uint64_t seed,
                          const RowCallback& on_row = {});

}  // namespace rldc
