#include "rldc/evaluation.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rldc {

Summary summarize(std::span<const double> rewards) {
  if (rewards.empty()) return {};
  double sum = 0.0;
  for (double r : rewards) sum += r;
  const double mean = sum / static_cast<double>(rewards.size());
  double sq = 0.0;
  for (double r : rewards) sq += (r - mean) * (r - mean);
  return {mean, std::sqrt(sq / static_cast<double>(rewards.size()))};
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

int act_epsilon_greedy(const Network& network, const Observation& observation, double epsilon,
                       SplitMix64& rng) {
  const double u = rng.next_double();
  if (u < epsilon) return static_cast<int>(rng.uniform_index(network.num_actions()));
  const Tensor q = network.forward(observation.frames).q_values;
  return static_cast<int>(argmax(q.values()));
}

std::vector<double> run_episodes(const Network& network, const EnvConfig& env,
                                 std::size_t episodes, double epsilon, const EpisodeSeeds& seeds) {
  env.validate();
  std::vector<double> totals(episodes, 0.0);
  // An exception inside the parallel region must not escape it.
  std::string failure;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < episodes; ++i) {
    try {
      Environment e(env);
      Observation obs = e.reset(derive_seed(seeds.seed, seeds.env_stream, i));
      SplitMix64 rng(derive_seed(seeds.seed, seeds.policy_stream, i));
      double total = 0.0;
      while (!e.terminal()) {
        StepResult r = e.step(act_epsilon_greedy(network, obs, epsilon, rng));
        total += r.reward;
        obs = std::move(r.observation);
      }
      totals[i] = total;
    } catch (const std::exception& ex) {
#pragma omp critical
      failure = ex.what();
    }
  }
  if (!failure.empty()) throw std::runtime_error(failure);
  return totals;
}

// ---------------------------------------------------------------- EvalLog

namespace {

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s) {
  if (s.empty()) return 0.0;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

constexpr const char* kHeader = "iter,phase,episodes,mean_reward,std_reward,epsilon,loss_mean,wall_s";

}  // namespace

std::string EvalLog::to_csv(bool include_wall) const {
  std::ostringstream out;
  out << kHeader << (with_kl_ ? ",kl_loss_mean" : "") << '\n';
  for (const EvalRow& r : rows_) {
    out << r.iter << ',' << r.phase << ',' << r.episodes << ',' << fmt(r.mean_reward) << ','
        << fmt(r.std_reward) << ',' << fmt(r.epsilon) << ',' << fmt(r.loss_mean) << ','
        << (include_wall ? fmt(r.wall_s) : "");
    if (with_kl_) {
      out << ',';
      if (r.kl_loss_mean) out << fmt(*r.kl_loss_mean);
    }
    out << '\n';
  }
  return out.str();
}

void EvalLog::write_csv(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << to_csv();
}

EvalLog EvalLog::read_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path + ": empty eval log");
  bool kl = false;
  if (line == std::string(kHeader) + ",kl_loss_mean") {
    kl = true;
  } else if (line != kHeader) {
    throw std::runtime_error(path + ": unexpected eval log header");
  }
  EvalLog log(kl);
  const std::size_t cols = kl ? 9 : 8;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto c = split(line, ',');
    if (c.size() != cols) throw std::runtime_error(path + ": malformed row '" + line + "'");
    EvalRow r;
    r.iter = std::stoull(c[0]);
    r.phase = c[1];
    r.episodes = std::stoull(c[2]);
    r.mean_reward = parse_double(c[3]);
    r.std_reward = parse_double(c[4]);
    r.epsilon = parse_double(c[5]);
    r.loss_mean = parse_double(c[6]);
    r.wall_s = parse_double(c[7]);
    if (kl && !c[8].empty()) r.kl_loss_mean = parse_double(c[8]);
    log.add(std::move(r));
  }
  return log;
}

void write_rewards_csv(const std::string& path, std::span<const double> rewards) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << "episode,reward\n";
  for (std::size_t i = 0; i < rewards.size(); ++i) f << i << ',' << fmt(rewards[i]) << '\n';
}

std::vector<double> read_rewards_csv(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(f, line) || line != "episode,reward") {
    throw std::runtime_error(path + ": unexpected rewards header");
  }
  std::vector<double> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto c = split(line, ',');
    if (c.size() != 2 || std::stoull(c[0]) != out.size()) {
      throw std::runtime_error(path + ": malformed row '" + line + "'");
    }
    out.push_back(parse_double(c[1]));
  }
  return out;
}

}  // namespace rldc
