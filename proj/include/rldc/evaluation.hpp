#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rldc/env.hpp"
#include "rldc/network.hpp"
#include "rldc/rng.hpp"

namespace rldc {

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population (divisor n)
};

Summary summarize(std::span<const double> rewards);

// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

// Draws u first; u < epsilon picks a uniform action, otherwise greedy.
int act_epsilon_greedy(const Network& network, const Observation& observation, double epsilon,
                       SplitMix64& rng);

// Seeds for episode i are derive_seed(seed, env_stream, i) for the
// environment and derive_seed(seed, policy_stream, i) for exploration.
struct EpisodeSeeds {
  std::uint64_t seed = 0;
  std::uint64_t env_stream = streams::kEvalEnv;
  std::uint64_t policy_stream = streams::kEvalPolicy;
};

// Plays `episodes` epsilon-greedy episodes and returns their total rewards in
// episode order. Episodes run in parallel; each one is self-contained so the
// result does not depend on the thread count.
std::vector<double> run_episodes(const Network& network, const EnvConfig& env,
                                 std::size_t episodes, double epsilon, const EpisodeSeeds& seeds);

struct EvalRow {
  std::size_t iter = 0;
  std::string phase;  // train | eval | final
  std::size_t episodes = 0;
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double epsilon = 0.0;
  double loss_mean = 0.0;
  double wall_s = 0.0;
  std::optional<double> kl_loss_mean;

  friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

class EvalLog {
 public:
  explicit EvalLog(bool with_kl = false) : with_kl_(with_kl) {}

  bool with_kl() const noexcept { return with_kl_; }
  void add(EvalRow row) { rows_.push_back(std::move(row)); }
  const std::vector<EvalRow>& rows() const noexcept { return rows_; }

  // Numbers are printed with 17 significant digits so the CSV round-trips.
  // Wall time is the only nondeterministic column; include_wall=false
  // blanks it for reproducibility comparisons.
  std::string to_csv(bool include_wall = true) const;
  void write_csv(const std::string& path) const;
  static EvalLog read_csv(const std::string& path);

 private:
  bool with_kl_;
  std::vector<EvalRow> rows_;
};

// Writes one reward per line under the header "episode,reward".
void write_rewards_csv(const std::string& path, std::span<const double> rewards);
std::vector<double> read_rewards_csv(const std::string& path);

}  // namespace rldc
