#include "rldc/dqn.hpp"

#include <algorithm>
#include <chrono>
#include <limits>
#include <stdexcept>

namespace rldc {

void DqnConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("dqn: gamma must be in [0, 1]");
  if (batch_size < 1) throw std::invalid_argument("dqn: batch_size must be >= 1");
  if (replay_capacity < batch_size) {
    throw std::invalid_argument("dqn: replay_capacity must be >= batch_size");
  }
  if (learn_start < 1) throw std::invalid_argument("dqn: learn_start must be >= 1");
  if (target_sync < 1) throw std::invalid_argument("dqn: target_sync must be >= 1");
  if (eval_interval < 1) throw std::invalid_argument("dqn: eval_interval must be >= 1");
  if (train_iterations % eval_interval != 0) {
    throw std::invalid_argument("dqn: eval_interval must divide train_iterations");
  }
  if (final_episodes < 1) throw std::invalid_argument("dqn: final_episodes must be >= 1");
  for (double e : {epsilon_start, epsilon_end, eval_epsilon}) {
    if (!(e >= 0.0 && e <= 1.0)) throw std::invalid_argument("dqn: epsilons must be in [0, 1]");
  }
  if (!(epsilon_decay_fraction >= 0.0 && epsilon_decay_fraction <= 1.0)) {
    throw std::invalid_argument("dqn: epsilon_decay_fraction must be in [0, 1]");
  }
  if (!(huber_delta > 0.0)) throw std::invalid_argument("dqn: huber_delta must be > 0");
  if (!(optimizer.lr > 0.0)) throw std::invalid_argument("dqn: lr must be > 0");
}

double epsilon_at(const DqnConfig& config, std::size_t iteration) {
  const double span = config.epsilon_decay_fraction * static_cast<double>(config.train_iterations);
  if (span <= 0.0) return config.epsilon_end;
  const double t = static_cast<double>(iteration) / span;
  if (t >= 1.0) return config.epsilon_end;
  return config.epsilon_start + t * (config.epsilon_end - config.epsilon_start);
}

void gather_states(std::span<const Transition* const> batch, bool next, Tensor& out) {
  if (batch.empty()) throw std::invalid_argument("gather_states: empty batch");
  const Shape& s = (next ? batch[0]->next_state : batch[0]->state).shape();
  Shape want{batch.size()};
  want.insert(want.end(), s.begin(), s.end());
  if (out.shape() != want) out.resize(want);
  const std::size_t per = shape_numel(s);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PackedObservation& p = next ? batch[i]->next_state : batch[i]->state;
    if (p.shape() != s) throw std::invalid_argument("gather_states: mixed observation shapes");
    p.unpack_into(out.data() + i * per);
  }
}

namespace {

// Batch buffers are large enough that reallocating them every step costs
// as much as the arithmetic.
thread_local Tensor tl_states;

}  // namespace

std::vector<double> q_targets(Network& target, std::span<const Transition* const> batch,
                              double gamma) {
  std::vector<double> y(batch.size());
  bool any_live = false;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    y[i] = batch[i]->reward;
    any_live = any_live || !batch[i]->terminal;
  }
  if (!any_live || gamma == 0.0) return y;
  gather_states(batch, /*next=*/true, tl_states);
  const Tensor& q = target.forward_batch(tl_states);
  const std::size_t a = q.dim(1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->terminal) continue;
    const double* row = q.data() + i * a;
    y[i] += gamma * *std::max_element(row, row + a);
  }
  return y;
}

double q_learning_step(Network& online, Network& target, std::span<const Transition* const> batch,
                       const DqnConfig& config, RmsProp& optimizer) {
  if (batch.empty()) throw std::invalid_argument("q_learning_step: empty batch");
  const std::vector<double> y = q_targets(target, batch, config.gamma);
  gather_states(batch, /*next=*/false, tl_states);
  const Tensor& q = online.forward_batch(tl_states);
  const std::size_t a = q.dim(1);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  std::vector<double> grad(q.size(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int act = batch[i]->action;
    if (act < 0 || static_cast<std::size_t>(act) >= a) {
      throw std::invalid_argument("q_learning_step: action out of range");
    }
    const HuberResult h = huber_loss(q[i * a + act], y[i], config.huber_delta);
    loss += h.loss * inv_n;
    grad[i * a + act] = h.grad * inv_n;
  }
  online.zero_grad();
  online.backward(grad);
  auto params = online.parameter_tensors();
  optimizer.step(params);
  return loss;
}

void sync_target(const Network& online, Network& target) { target.copy_weights_from(online); }

namespace protocol {

std::vector<double> periodic_eval(const Network& net, const EnvConfig& env, std::size_t episodes,
                                  double epsilon, std::uint64_t seed) {
  return run_episodes(net, env, episodes, epsilon,
                      {seed, streams::kEvalEnv, streams::kEvalPolicy});
}

std::vector<double> final_eval(const Network& net, const EnvConfig& env, std::size_t episodes,
                               double epsilon, std::uint64_t seed) {
  return run_episodes(net, env, episodes, epsilon,
                      {seed, streams::kFinalEnv, streams::kFinalPolicy});
}

std::uint64_t train_episode_seed(std::uint64_t seed, std::size_t episode) {
  return derive_seed(seed, streams::kTrainEnv, episode);
}

}  // namespace protocol

TrainResult train_expert(const EnvConfig& env_cfg, const NetworkSpec& spec, const DqnConfig& config,
                         std::uint64_t seed, const RowCallback& on_row) {
  config.validate();
  env_cfg.validate();
  spec.validate();
  if (spec.input.frames != env_cfg.frame_stack || spec.input.height != env_cfg.render_h ||
      spec.input.width != env_cfg.render_w) {
    throw std::invalid_argument("train_expert: network input does not match the environment render");
  }
  if (spec.actions != kNumActions) {
    throw std::invalid_argument("train_expert: network has " + std::to_string(spec.actions) +
                                " actions, environment has " + std::to_string(kNumActions));
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  auto emit = [&](TrainResult& res, EvalRow row) {
    row.wall_s = wall();
    if (on_row) on_row(row);
    res.log.add(std::move(row));
  };

  Network online = Network::build(spec, derive_seed(seed, streams::kInit));
  Network target = online;
  RmsProp optimizer(config.optimizer);
  ReplayBuffer<Transition> replay(config.replay_capacity, derive_seed(seed, streams::kReplay));
  SplitMix64 explore(derive_seed(seed, streams::kExploration));

  auto meta = [&](std::size_t iter) {
    return nlohmann::json{{"kind", "expert"},
                          {"iter", iter},
                          {"seed", seed},
                          {"train_iterations", config.train_iterations}};
  };

  TrainResult res;
  res.best = make_checkpoint(online, meta(0));
  double best_mean = -std::numeric_limits<double>::infinity();

  Environment env(env_cfg);
  std::size_t episode = 0;
  Observation obs = env.reset(protocol::train_episode_seed(seed, episode));
  double window_loss = 0.0;
  std::size_t window_steps = 0;

  for (std::size_t iter = 1; iter <= config.train_iterations; ++iter) {
    const double eps = epsilon_at(config, iter - 1);
    const int action = act_epsilon_greedy(online, obs, eps, explore);
    StepResult step = env.step(action);
    Transition t;
    t.state = PackedObservation(obs);
    t.action = action;
    t.reward = step.reward;
    t.next_state = PackedObservation(step.observation);
    t.terminal = step.terminal;
    replay.push(std::move(t));
    obs = step.terminal ? env.reset(protocol::train_episode_seed(seed, ++episode))
                        : std::move(step.observation);

    if (replay.size() >= config.learn_start) {
      const auto batch = replay.sample(config.batch_size);
      const double loss = q_learning_step(online, target, batch, config, optimizer);
      res.loss_trace.push_back(loss);
      window_loss += loss;
      ++window_steps;
    }
    if (iter % config.target_sync == 0) sync_target(online, target);

    if (iter % config.eval_interval == 0) {
      EvalRow train_row;
      train_row.iter = iter;
      train_row.phase = "train";
      train_row.epsilon = epsilon_at(config, iter);
      train_row.loss_mean = window_steps ? window_loss / static_cast<double>(window_steps) : 0.0;
      emit(res, train_row);
      window_loss = 0.0;
      window_steps = 0;

      const auto rewards =
          protocol::periodic_eval(online, env_cfg, config.eval_episodes, config.eval_epsilon, seed);
      const Summary s = summarize(rewards);
      EvalRow row;
      row.iter = iter;
      row.phase = "eval";
      row.episodes = rewards.size();
      row.mean_reward = s.mean;
      row.std_reward = s.std;
      row.epsilon = config.eval_epsilon;
      emit(res, row);
      if (s.mean > best_mean) {  // strict: the earliest checkpoint wins ties
        best_mean = s.mean;
        res.best = make_checkpoint(online, meta(iter));
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
