#include "rldc/distill.hpp"

#include <chrono>
#include <limits>
#include <stdexcept>

namespace rldc {

void DistillConfig::validate() const {
  if (!(tau_expert > 0.0) || !(tau_student > 0.0)) {
    throw std::invalid_argument("distill: temperatures must be > 0");
  }
  if (batch_size < 1) throw std::invalid_argument("distill: batch_size must be >= 1");
  if (replay_capacity < batch_size) {
    throw std::invalid_argument("distill: replay_capacity must be >= batch_size");
  }
  if (learn_start < 1) throw std::invalid_argument("distill: learn_start must be >= 1");
  if (eval_interval < 1) throw std::invalid_argument("distill: eval_interval must be >= 1");
  if (train_iterations % eval_interval != 0) {
    throw std::invalid_argument("distill: eval_interval must divide train_iterations");
  }
  if (final_episodes < 1) throw std::invalid_argument("distill: final_episodes must be >= 1");
  if (!(eval_epsilon >= 0.0 && eval_epsilon <= 1.0)) {
    throw std::invalid_argument("distill: eval_epsilon must be in [0, 1]");
  }
  if (!(optimizer.lr > 0.0)) throw std::invalid_argument("distill: lr must be > 0");
}

PolicyDistribution expert_policy(const Network& expert, const Observation& observation, double tau) {
  const Tensor q = expert.forward(observation.frames).q_values;
  return softmax_temperature(q.values(), tau);
}

int sample_from(const PolicyDistribution& policy, double u) {
  double cdf = 0.0;
  for (std::size_t a = 0; a < policy.size(); ++a) {
    cdf += policy[a];
    if (u < cdf) return static_cast<int>(a);
  }
  // Rounding can leave the total a hair under 1; fall back to the last
  // action that has mass.
  for (std::size_t a = policy.size(); a-- > 0;) {
    if (policy[a] > 0.0) return static_cast<int>(a);
  }
  return static_cast<int>(policy.size()) - 1;
}

int sample_student_action(const Network& student, const Observation& observation, double tau,
                          SplitMix64& rng) {
  const Tensor q = student.forward(observation.frames).q_values;
  return sample_from(softmax_temperature(q.values(), tau), rng.next_double());
}

double distill_loss_and_grad(Network& student, Network& expert, const Tensor& states,
                             const DistillConfig& config) {
  if (states.rank() != 4 || states.dim(0) == 0) {
    throw std::invalid_argument("distill: states must be a nonempty [N, frames, H, W] batch");
  }
  if (student.num_actions() != expert.num_actions()) {
    throw std::invalid_argument("distill: student and expert action counts differ");
  }
  const std::size_t n = states.dim(0);
  const std::size_t a = student.num_actions();
  // Expert targets first: forward_batch returns a reference into the tape.
  std::vector<PolicyDistribution> targets;
  targets.reserve(n);
  {
    const Tensor& qe = expert.forward_batch(states);
    for (std::size_t i = 0; i < n; ++i) {
      targets.push_back(softmax_temperature(std::span<const double>(qe.data() + i * a, a),
                                            config.tau_expert));
    }
  }
  const Tensor& qs = student.forward_batch(states);
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> grad(n * a);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const KlLoss kl = kl_softmax_loss(targets[i], std::span<const double>(qs.data() + i * a, a),
                                      config.tau_student);
    loss += kl.loss * inv_n;
    for (std::size_t j = 0; j < a; ++j) grad[i * a + j] = kl.grad_logits[j] * inv_n;
  }
  student.zero_grad();
  student.backward(grad);
  return loss;
}

double distill_step(Network& student, Network& expert, const Tensor& states,
                    const DistillConfig& config, RmsProp& optimizer) {
  const double loss = distill_loss_and_grad(student, expert, states, config);
  auto params = student.parameter_tensors();
  optimizer.step(params);
  return loss;
}

namespace {

void gather(const ReplayBuffer<PackedObservation>& replay, std::span<const std::size_t> idx,
            Tensor& out) {
  const Shape& s = replay.at(idx[0]).shape();
  Shape want{idx.size()};
  want.insert(want.end(), s.begin(), s.end());
  if (out.shape() != want) out.resize(want);
  const std::size_t per = shape_numel(s);
  for (std::size_t i = 0; i < idx.size(); ++i) replay.at(idx[i]).unpack_into(out.data() + i * per);
}

}  // namespace

TrainResult train_student(const Checkpoint& expert_ckpt, const NetworkSpec& student_spec,
                          const EnvConfig& env_cfg, const DistillConfig& config,
                          std::uint64_t seed, const RowCallback& on_row) {
  config.validate();
  env_cfg.validate();
  student_spec.validate();
  Network expert = network_from(expert_ckpt);
  if (expert.num_actions() != student_spec.actions) {
    throw std::invalid_argument("train_student: expert has " +
                                std::to_string(expert.num_actions()) + " actions, student has " +
                                std::to_string(student_spec.actions));
  }
  if (!(expert.spec().input == student_spec.input)) {
    throw std::invalid_argument("train_student: expert and student input shapes differ");
  }
  if (student_spec.input.frames != env_cfg.frame_stack ||
      student_spec.input.height != env_cfg.render_h ||
      student_spec.input.width != env_cfg.render_w) {
    throw std::invalid_argument("train_student: network input does not match the environment render");
  }
  if (student_spec.actions != kNumActions) {
    throw std::invalid_argument("train_student: network has " +
                                std::to_string(student_spec.actions) +
                                " actions, environment has " + std::to_string(kNumActions));
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto emit = [&](TrainResult& res, EvalRow row) {
    row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_row) on_row(row);
    res.log.add(std::move(row));
  };

  Network student = Network::build(student_spec, derive_seed(seed, streams::kInit));
  RmsProp optimizer(config.optimizer);
  ReplayBuffer<PackedObservation> replay(config.replay_capacity,
                                         derive_seed(seed, streams::kReplay));
  SplitMix64 explore(derive_seed(seed, streams::kExploration));

  auto meta = [&](std::size_t iter) {
    return nlohmann::json{{"kind", "student"},
                          {"iter", iter},
                          {"seed", seed},
                          {"train_iterations", config.train_iterations}};
  };

  TrainResult res;
  res.log = EvalLog(/*with_kl=*/true);
  res.best = make_checkpoint(student, meta(0));
  double best_mean = -std::numeric_limits<double>::infinity();

  Environment env(env_cfg);
  std::size_t episode = 0;
  Observation obs = env.reset(protocol::train_episode_seed(seed, episode));
  Tensor states;
  double window_loss = 0.0;
  std::size_t window_steps = 0;

  for (std::size_t iter = 1; iter <= config.train_iterations; ++iter) {
    replay.push(PackedObservation(obs));
    const int action = sample_student_action(student, obs, config.tau_student, explore);
    StepResult step = env.step(action);
    obs = step.terminal ? env.reset(protocol::train_episode_seed(seed, ++episode))
                        : std::move(step.observation);

    if (replay.size() >= config.learn_start) {
      const auto idx = replay.sample_indices(config.batch_size);
      gather(replay, idx, states);
      const double loss = distill_step(student, expert, states, config, optimizer);
      res.loss_trace.push_back(loss);
      window_loss += loss;
      ++window_steps;
    }

    if (iter % config.eval_interval == 0) {
      const double mean_loss = window_steps ? window_loss / static_cast<double>(window_steps) : 0.0;
      EvalRow train_row;
      train_row.iter = iter;
      train_row.phase = "train";
      train_row.loss_mean = mean_loss;
      train_row.kl_loss_mean = mean_loss;
      emit(res, train_row);
      window_loss = 0.0;
      window_steps = 0;

      const auto rewards = protocol::periodic_eval(student, env_cfg, config.eval_episodes,
                                                   config.eval_epsilon, seed);
      const Summary s = summarize(rewards);
      EvalRow row;
      row.iter = iter;
      row.phase = "eval";
      row.episodes = rewards.size();
      row.mean_reward = s.mean;
      row.std_reward = s.std;
      row.epsilon = config.eval_epsilon;
      emit(res, row);
      if (s.mean > best_mean) {
        best_mean = s.mean;
        res.best = make_checkpoint(student, meta(iter));
        res.best_iter = iter;
      }
    }
  }

  const Network best = network_from(res.best);
  res.final_rewards =
      protocol::final_eval(best, env_cfg, config.final_episodes, config.eval_epsilon, seed);
  res.final_summary = summarize(res.final_rewards);
  EvalRow row;
  row.iter = res.best_iter;
  row.phase = "final";
  row.episodes = res.final_rewards.size();
  row.mean_reward = res.final_summary.mean;
  row.std_reward = res.final_summary.std;
  row.epsilon = config.eval_epsilon;
  emit(res, row);
  return res;
}

}  // namespace rldc
