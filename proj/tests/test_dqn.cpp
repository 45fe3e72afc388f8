#include "doctest.h"

#include <cmath>

#include "rldc/dqn.hpp"

using namespace rldc;

namespace {

// Q(s, a) = W[a] . s + b[a] on one-hot 1x1x2 states.
NetworkSpec linear_spec() {
  NetworkSpec spec;
  spec.input = {1, 1, 2};
  spec.tail = Tail::flatten;
  spec.hidden = 0;
  spec.actions = 2;
  return spec;
}

PackedObservation state(double a, double b) {
  return PackedObservation(Observation{Tensor({1, 1, 2}, {a, b})});
}

std::vector<const Transition*> pointers(const std::vector<Transition>& ts) {
  std::vector<const Transition*> out;
  for (const auto& t : ts) out.push_back(&t);
  return out;
}

DqnConfig tiny_config(std::size_t iterations) {
  DqnConfig cfg;
  cfg.train_iterations = iterations;
  cfg.learn_start = 32;
  cfg.replay_capacity = 500;
  cfg.target_sync = 50;
  cfg.eval_interval = 100;
  cfg.eval_episodes = 3;
  cfg.final_episodes = 4;
  return cfg;
}

}  // namespace

TEST_CASE("epsilon schedule is linear then clamped") {
  DqnConfig cfg;
  cfg.train_iterations = 1000;
  CHECK(epsilon_at(cfg, 0) == 1.0);
  CHECK(epsilon_at(cfg, 50) == doctest::Approx(0.55));
  CHECK(epsilon_at(cfg, 100) == doctest::Approx(0.1));
  CHECK(epsilon_at(cfg, 900) == 0.1);
}

TEST_CASE("q targets: terminal and gamma zero") {
  Network target = Network::build(linear_spec(), 1);
  std::vector<Transition> ts = {
      {state(1, 0), 0, 0.25, state(0, 1), true},
      {state(0, 1), 1, -1.0, state(1, 0), true},
  };
  auto y = q_targets(target, pointers(ts), 0.99);
  CHECK(y[0] == 0.25);
  CHECK(y[1] == -1.0);

  ts[0].terminal = ts[1].terminal = false;
  y = q_targets(target, pointers(ts), 0.0);
  CHECK(y[0] == 0.25);
  CHECK(y[1] == -1.0);

  const auto q = target.forward(Tensor({1, 1, 2}, {0, 1})).q_values;
  y = q_targets(target, pointers(ts), 0.5);
  CHECK(y[0] == doctest::Approx(0.25 + 0.5 * std::max(q[0], q[1])).epsilon(1e-12));
}

TEST_CASE("q-learning solves a two-state chain") {
  // A --a0--> B (r 0); A --a1--> end (r 0.5); B --any--> end (r 1).
  // With gamma 0.9: Q(A,0)=0.9, Q(A,1)=0.5, Q(B,.)=1.
  const std::vector<Transition> ts = {
      {state(1, 0), 0, 0.0, state(0, 1), false},
      {state(1, 0), 1, 0.5, state(0, 0), true},
      {state(0, 1), 0, 1.0, state(0, 0), true},
      {state(0, 1), 1, 1.0, state(0, 0), true},
  };
  DqnConfig cfg;
  cfg.gamma = 0.9;
  Network online = Network::build(linear_spec(), 3);
  Network target = Network::build(linear_spec(), 3);
  sync_target(online, target);
  RmsProp opt({0.01, 0.95, 1e-6});
  const auto batch = pointers(ts);
  for (int step = 1; step <= 4000; ++step) {
    q_learning_step(online, target, batch, cfg, opt);
    if (step % 20 == 0) sync_target(online, target);
  }
  const auto qa = online.forward(Tensor({1, 1, 2}, {1, 0})).q_values;
  const auto qb = online.forward(Tensor({1, 1, 2}, {0, 1})).q_values;
  CHECK(qa[0] == doctest::Approx(0.9).epsilon(0.03));
  CHECK(qa[1] == doctest::Approx(0.5).epsilon(0.03));
  CHECK(qb[0] == doctest::Approx(1.0).epsilon(0.03));
  CHECK(qb[1] == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("sync after k steps equals a snapshot of online") {
  const std::vector<Transition> ts = {{state(1, 0), 1, 1.0, state(0, 1), false}};
  DqnConfig cfg;
  Network online = Network::build(linear_spec(), 4);
  Network target = Network::build(linear_spec(), 5);
  RmsProp opt;
  for (int i = 0; i < 7; ++i) q_learning_step(online, target, pointers(ts), cfg, opt);
  const Checkpoint snapshot = make_checkpoint(online);
  sync_target(online, target);
  CHECK(encode_checkpoint(make_checkpoint(target)) == encode_checkpoint(snapshot));
}

TEST_CASE("epsilon-greedy action selection") {
  NetworkSpec spec = linear_spec();
  spec.actions = 3;
  Network net = Network::build(spec, 1);
  auto params = net.parameters();
  params[0].tensor->fill(0.0);
  params[1].tensor->fill(0.0);
  Observation obs{Tensor({1, 1, 2}, {1, 0})};
  SplitMix64 rng(1);
  CHECK(act_epsilon_greedy(net, obs, 0.0, rng) == 0);  // ties -> lowest index
  (*params[1].tensor)[2] = 1.0;
  CHECK(act_epsilon_greedy(net, obs, 0.0, rng) == 2);

  std::vector<int> counts(3, 0);
  const int n = 10'000;
  for (int i = 0; i < n; ++i) ++counts[act_epsilon_greedy(net, obs, 1.0, rng)];
  const double p = 1.0 / 3.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (int c : counts) CHECK(std::abs(c - n * p) < 3 * sigma);
}

TEST_CASE("train_expert: zero iterations evaluates the initial network") {
  const EnvConfig env;
  const NetworkSpec spec = arch_spec("max-halved", {4, 44, 44}, 3);
  const auto res = train_expert(env, spec, tiny_config(0), 11);
  CHECK(res.best_iter == 0);
  CHECK(res.final_rewards.size() == 4);
  CHECK(encode_checkpoint(res.best) ==
        encode_checkpoint(make_checkpoint(Network::build(spec, derive_seed(11, streams::kInit)),
                                          res.best.metadata)));
  REQUIRE(res.log.rows().size() == 1);
  CHECK(res.log.rows()[0].phase == "final");
}

TEST_CASE("train_expert is deterministic") {
  const EnvConfig env;
  const NetworkSpec spec = arch_spec("max-halved", {4, 44, 44}, 3);
  const auto a = train_expert(env, spec, tiny_config(200), 3);
  // shift later heap addresses so the rerun sees differently placed buffers
  std::vector<std::vector<char>> junk;
  for (std::size_t i = 1; i < 64; ++i) junk.emplace_back(8 * i + 24);
  const auto b = train_expert(env, spec, tiny_config(200), 3);
  CHECK(a.log.to_csv(false) == b.log.to_csv(false));
  CHECK(encode_checkpoint(a.best) == encode_checkpoint(b.best));
  CHECK(a.log.rows().size() == 5);  // 2 x (train, eval) + final
  CHECK(a.loss_trace.size() == 200 - 32 + 1);

  CHECK_THROWS(train_expert(env, arch_spec("max-halved", {4, 40, 40}, 3), tiny_config(200), 3));
  DqnConfig bad = tiny_config(150);
  CHECK_THROWS(train_expert(env, spec, bad, 3));
}
