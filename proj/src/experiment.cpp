#include "rldc/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "rldc/localize.hpp"

#ifndef RLDC_CODE_VERSION
#define RLDC_CODE_VERSION "unknown"
#endif

namespace rldc {

using nlohmann::json;

std::string code_version() { return RLDC_CODE_VERSION; }

// ---------------------------------------------------------------- JSON

namespace {

// Reads keys from one JSON object and rejects whatever was not asked for.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw std::invalid_argument("config: '" + name_ + "' must be an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    allowed_.insert(key);
    if (!j_.contains(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "expected a boolean");
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) fail(key, "expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(key, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(key, "expected a string");
    }
    out = v.get<T>();
  }

  bool has(const std::string& key) {
    allowed_.insert(key);
    return j_.contains(key);
  }
  const json& at(const std::string& key) const { return j_.at(key); }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!allowed_.count(item.key())) {
        throw std::invalid_argument("config: unknown key '" + name_ + "." + item.key() + "'");
      }
    }
  }

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw std::invalid_argument("config: '" + name_ + "." + key + "': " + why);
  }

  const json& j_;
  std::string name_;
  std::set<std::string> allowed_;
};

json optimizer_json(const RmsPropConfig& o) {
  return {{"lr", o.lr}, {"decay", o.decay}, {"epsilon", o.epsilon}};
}

void optimizer_from(const json& j, const std::string& name, RmsPropConfig& o) {
  Section s(j, name);
  s.get("lr", o.lr);
  s.get("decay", o.decay);
  s.get("epsilon", o.epsilon);
  s.finish();
}

}  // namespace

json to_json(const EnvConfig& c) {
  return {{"game", to_string(c.game)},     {"grid_h", c.grid_h},
          {"grid_w", c.grid_w},            {"render_h", c.render_h},
          {"render_w", c.render_w},        {"frame_stack", c.frame_stack},
          {"draw_score", c.draw_score},    {"max_steps", c.max_steps}};
}

void from_json_strict(const json& j, EnvConfig& c) {
  Section s(j, "env");
  std::string game = to_string(c.game);
  s.get("game", game);
  c.game = parse_game(game);
  s.get("grid_h", c.grid_h);
  s.get("grid_w", c.grid_w);
  s.get("render_h", c.render_h);
  s.get("render_w", c.render_w);
  s.get("frame_stack", c.frame_stack);
  s.get("draw_score", c.draw_score);
  s.get("max_steps", c.max_steps);
  s.finish();
  c.validate();
}

json to_json(const DqnConfig& c) {
  return {{"gamma", c.gamma},
          {"optimizer", optimizer_json(c.optimizer)},
          {"huber_delta", c.huber_delta},
          {"batch_size", c.batch_size},
          {"replay_capacity", c.replay_capacity},
          {"learn_start", c.learn_start},
          {"target_sync", c.target_sync},
          {"epsilon_start", c.epsilon_start},
          {"epsilon_end", c.epsilon_end},
          {"epsilon_decay_fraction", c.epsilon_decay_fraction},
          {"train_iterations", c.train_iterations},
          {"eval_interval", c.eval_interval},
          {"eval_episodes", c.eval_episodes},
          {"final_episodes", c.final_episodes},
          {"eval_epsilon", c.eval_epsilon}};
}

void from_json_strict(const json& j, DqnConfig& c) {
  Section s(j, "dqn");
  s.get("gamma", c.gamma);
  if (s.has("optimizer")) optimizer_from(s.at("optimizer"), "dqn.optimizer", c.optimizer);
  s.get("huber_delta", c.huber_delta);
  s.get("batch_size", c.batch_size);
  s.get("replay_capacity", c.replay_capacity);
  s.get("learn_start", c.learn_start);
  s.get("target_sync", c.target_sync);
  s.get("epsilon_start", c.epsilon_start);
  s.get("epsilon_end", c.epsilon_end);
  s.get("epsilon_decay_fraction", c.epsilon_decay_fraction);
  s.get("train_iterations", c.train_iterations);
  s.get("eval_interval", c.eval_interval);
  s.get("eval_episodes", c.eval_episodes);
  s.get("final_episodes", c.final_episodes);
  s.get("eval_epsilon", c.eval_epsilon);
  s.finish();
  c.validate();
}

json to_json(const DistillConfig& c) {
  return {{"tau_expert", c.tau_expert},
          {"tau_student", c.tau_student},
          {"optimizer", optimizer_json(c.optimizer)},
          {"batch_size", c.batch_size},
          {"replay_capacity", c.replay_capacity},
          {"learn_start", c.learn_start},
          {"train_iterations", c.train_iterations},
          {"eval_interval", c.eval_interval},
          {"eval_episodes", c.eval_episodes},
          {"final_episodes", c.final_episodes},
          {"eval_epsilon", c.eval_epsilon}};
}

void from_json_strict(const json& j, DistillConfig& c) {
  Section s(j, "distill");
  s.get("tau_expert", c.tau_expert);
  s.get("tau_student", c.tau_student);
  if (s.has("optimizer")) optimizer_from(s.at("optimizer"), "distill.optimizer", c.optimizer);
  s.get("batch_size", c.batch_size);
  s.get("replay_capacity", c.replay_capacity);
  s.get("learn_start", c.learn_start);
  s.get("train_iterations", c.train_iterations);
  s.get("eval_interval", c.eval_interval);
  s.get("eval_episodes", c.eval_episodes);
  s.get("final_episodes", c.final_episodes);
  s.get("eval_epsilon", c.eval_epsilon);
  s.finish();
  c.validate();
}

InputShape input_shape(const EnvConfig& env) {
  return {env.frame_stack, env.render_h, env.render_w};
}

// ---------------------------------------------------------------- cells

std::string to_string(Mode mode) { return mode == Mode::kd ? "kd" : "no_kd"; }

std::string Cell::id() const { return to_string(mode) + "_" + to_string(tail) + "_" + to_string(width); }

std::vector<Cell> all_cells() {
  std::vector<Cell> cells;
  for (Mode m : {Mode::kd, Mode::no_kd}) {
    for (Tail t : {Tail::max_pool, Tail::flatten}) {
      for (Width w : {Width::same, Width::halved}) cells.push_back({m, t, w});
    }
  }
  return cells;
}

void ExperimentConfig::validate() const {
  env.validate();
  dqn.validate();
  distill.validate();
  if (seeds.empty()) throw std::invalid_argument("config: seeds must not be empty");
  if (cell_iterations) {
    if (*cell_iterations % dqn.eval_interval != 0 || *cell_iterations % distill.eval_interval != 0) {
      throw std::invalid_argument("config: cell_iterations must be a multiple of both eval intervals");
    }
  }
  if (dqn.final_episodes != distill.final_episodes) {
    throw std::invalid_argument("config: dqn and distill final_episodes must match");
  }
}

json to_json(const ExperimentConfig& c) {
  json j{{"env", to_json(c.env)},
         {"hidden", c.hidden},
         {"dqn", to_json(c.dqn)},
         {"distill", to_json(c.distill)},
         {"seeds", c.seeds}};
  if (c.cell_iterations) j["cell_iterations"] = *c.cell_iterations;
  if (c.expert_checkpoint) j["expert_checkpoint"] = c.expert_checkpoint->string();
  return j;
}

ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig c;
  Section s(j, "config");
  if (s.has("env")) from_json_strict(s.at("env"), c.env);
  s.get("hidden", c.hidden);
  if (s.has("dqn")) from_json_strict(s.at("dqn"), c.dqn);
  if (s.has("distill")) from_json_strict(s.at("distill"), c.distill);
  if (s.has("seeds")) {
    const json& seeds = s.at("seeds");
    if (!seeds.is_array()) throw std::invalid_argument("config: 'seeds' must be an array");
    c.seeds.clear();
    for (const json& v : seeds) {
      if (!v.is_number_unsigned()) throw std::invalid_argument("config: seeds must be non-negative integers");
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  if (s.has("cell_iterations")) {
    std::size_t n = 0;
    s.get("cell_iterations", n);
    c.cell_iterations = n;
  }
  if (s.has("expert_checkpoint")) {
    std::string p;
    s.get("expert_checkpoint", p);
    c.expert_checkpoint = p;
  }
  s.finish();
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return experiment_from_json(j);
}

json decision_values() {
  return {{"overlay_alpha", kDefaultOverlayAlpha},
          {"aggregate_map", "elementwise max over channels"},
          {"bilinear", "align-corners"},
          {"std_estimator", "population (divisor n)"},
          {"iteration_unit", "environment step; one gradient step per step from learn_start"},
          {"best_checkpoint_tie_break", "earliest"},
          {"checkpoint_precision", "float32"}};
}

json run_metadata(const json& config, const std::string& command) {
  return {{"command", command},
          {"code_version", code_version()},
          {"config", config},
          {"decisions", decision_values()}};
}

// ---------------------------------------------------------------- runs

void write_run(const std::filesystem::path& dir, const TrainResult& result, const json& metadata) {
  std::filesystem::create_directories(dir);
  save_checkpoint(result.best, dir / "best.rldc");
  result.log.write_csv((dir / "eval_log.csv").string());
  write_rewards_csv((dir / "final_rewards.csv").string(), result.final_rewards);
  json meta = metadata;
  meta["best_iter"] = result.best_iter;
  meta["final_mean"] = result.final_summary.mean;
  meta["final_std"] = result.final_summary.std;
  std::ofstream f(dir / "meta.json");
  f << meta.dump(2) << '\n';
}

bool run_complete(const std::filesystem::path& dir, std::size_t final_episodes) {
  try {
    if (!std::filesystem::exists(dir / "best.rldc") ||
        !std::filesystem::exists(dir / "final_rewards.csv") ||
        !std::filesystem::exists(dir / "meta.json")) {
      return false;
    }
    load_checkpoint(dir / "best.rldc");
    return read_rewards_csv((dir / "final_rewards.csv").string()).size() == final_episodes;
  } catch (const std::exception&) {
    return false;
  }
}

// ---------------------------------------------------------------- table

double ResultRow::median_mean() const {
  if (seeds.empty()) return 0.0;
  std::vector<double> m;
  for (const SeedResult& s : seeds) m.push_back(s.summary.mean);
  std::sort(m.begin(), m.end());
  const std::size_t n = m.size();
  return n % 2 ? m[n / 2] : 0.5 * (m[n / 2 - 1] + m[n / 2]);
}

const ResultRow& ResultTable::row(const Cell& cell) const {
  for (const ResultRow& r : rows) {
    if (r.cell == cell) return r;
  }
  throw std::out_of_range("result table has no row for " + cell.id());
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string ResultTable::to_csv() const {
  std::ostringstream out;
  out << "mode,tail,width,params,final_mean,final_std,episodes,train_iters,seed\n";
  for (const ResultRow& r : rows) {
    for (const SeedResult& s : r.seeds) {
      out << to_string(r.cell.mode) << ',' << to_string(r.cell.tail) << ','
          << to_string(r.cell.width) << ',' << r.params << ',' << fmt17(s.summary.mean) << ','
          << fmt17(s.summary.std) << ',' << s.rewards.size() << ',' << s.train_iters << ','
          << s.seed << '\n';
    }
  }
  return out.str();
}

std::string ResultTable::to_text() const {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-6s %-5s %-7s %10s %8s  %s\n", "Mode", "Tail", "Width",
                "Params", "Median", "Per-seed mean +- std");
  out << line;
  for (const ResultRow& r : rows) {
    std::string per_seed;
    for (const SeedResult& s : r.seeds) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s%.3f +- %.3f", per_seed.empty() ? "" : ", ",
                    s.summary.mean, s.summary.std);
      per_seed += buf;
    }
    std::string width = to_string(r.cell.width);
    if (r.cell.is_expert()) width += " (Expert)";
    if (r.cell == Cell{Mode::kd, Tail::max_pool, Width::halved}) width += " (Ours)";
    std::snprintf(line, sizeof line, "%-6s %-5s %-16s %10zu %8.3f  %s\n",
                  r.cell.mode == Mode::kd ? "KD" : "No KD", to_string(r.cell.tail).c_str(),
                  width.c_str(), r.params, r.median_mean(), per_seed.c_str());
    out << line;
  }
  return out.str();
}

// ---------------------------------------------------------------- grid

namespace {

std::filesystem::path cell_dir(const std::filesystem::path& out, const Cell& cell, std::uint64_t seed) {
  return out / "cells" / cell.id() / ("seed_" + std::to_string(seed));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

}  // namespace

ResultTable run_ablation(const ExperimentConfig& config, const GridOptions& options) {
  config.validate();
  if (options.parallel_cells < 1) throw std::invalid_argument("grid: parallel_cells must be >= 1");
  std::filesystem::create_directories(options.out);
  const json cfg_json = to_json(config);
  {
    std::ofstream f(options.out / "meta.json");
    json meta = run_metadata(cfg_json, "ablate");
    meta["student_budget_applies_to"] = "every non-expert cell, KD and No KD";
    f << meta.dump(2) << '\n';
  }
  std::mutex log_mutex;
  auto log = [&](const std::string& msg) {
    if (!options.log) return;
    std::lock_guard<std::mutex> lock(log_mutex);
    options.log(msg);
  };

  const InputShape input = input_shape(config.env);
  const std::size_t final_episodes = config.dqn.final_episodes;
  const std::size_t budget = config.cell_iterations.value_or(config.distill.train_iterations);
  const Cell expert_cell{Mode::no_kd, Tail::flatten, Width::same};
  auto spec_for = [&](const Cell& c) {
    return NetworkSpec::dqn(c.width, c.tail, input, kNumActions, config.hidden);
  };
  auto cell_meta = [&](const Cell& c, std::uint64_t seed, std::size_t iters) {
    json m = run_metadata(cfg_json, "ablate");
    m["cell"] = c.id();
    m["seed"] = seed;
    m["train_iters"] = iters;
    return m;
  };

  std::optional<Checkpoint> supplied;
  if (config.expert_checkpoint) {
    supplied = load_checkpoint(*config.expert_checkpoint);
    if (!(supplied->spec == spec_for(expert_cell))) {
      throw std::invalid_argument("grid: supplied expert checkpoint does not match the expert spec");
    }
  }

  // Phase 1: the expert of every seed.
  for (std::uint64_t seed : config.seeds) {
    const auto dir = cell_dir(options.out, expert_cell, seed);
    if (options.resume && run_complete(dir, final_episodes)) {
      log("resume: " + expert_cell.id() + " seed " + std::to_string(seed) + " already complete");
      continue;
    }
    try {
      if (supplied) {
        log(expert_cell.id() + " seed " + std::to_string(seed) + ": evaluating supplied expert");
        TrainResult r;
        r.best = *supplied;
        r.best_iter = supplied->metadata.value("iter", std::size_t{0});
        r.final_rewards = protocol::final_eval(network_from(*supplied), config.env, final_episodes,
                                               config.dqn.eval_epsilon, seed);
        r.final_summary = summarize(r.final_rewards);
        EvalRow row;
        row.iter = r.best_iter;
        row.phase = "final";
        row.episodes = r.final_rewards.size();
        row.mean_reward = r.final_summary.mean;
        row.std_reward = r.final_summary.std;
        row.epsilon = config.dqn.eval_epsilon;
        r.log.add(row);
        json m = cell_meta(expert_cell, seed,
                           supplied->metadata.value("train_iterations", std::size_t{0}));
        m["expert_checkpoint"] = config.expert_checkpoint->string();
        write_run(dir, r, m);
      } else {
        log(expert_cell.id() + " seed " + std::to_string(seed) + ": training expert");
        const TrainResult r = train_expert(config.env, spec_for(expert_cell), config.dqn, seed);
        write_run(dir, r, cell_meta(expert_cell, seed, config.dqn.train_iterations));
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("grid cell " + expert_cell.id() + " seed " + std::to_string(seed) +
                               " failed: " + e.what());
    }
  }

  // Phase 2: the remaining seven cells, optionally concurrently.
  struct Job {
    Cell cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const Cell& c : all_cells()) {
    if (c.is_expert()) continue;
    for (std::uint64_t seed : config.seeds) jobs.push_back({c, seed});
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      if (failed) return;
      const std::size_t i = next++;
      if (i >= jobs.size()) return;
      const Job& job = jobs[i];
      const std::string tag = job.cell.id() + " seed " + std::to_string(job.seed);
      const auto dir = cell_dir(options.out, job.cell, job.seed);
      if (options.resume && run_complete(dir, final_episodes)) {
        log("resume: " + tag + " already complete");
        continue;
      }
      try {
        log(tag + ": training");
        TrainResult r;
        if (job.cell.mode == Mode::kd) {
          DistillConfig d = config.distill;
          d.train_iterations = budget;
          const Checkpoint expert =
              load_checkpoint(cell_dir(options.out, expert_cell, job.seed) / "best.rldc");
          r = train_student(expert, spec_for(job.cell), config.env, d, job.seed);
        } else {
          DqnConfig q = config.dqn;
          q.train_iterations = budget;
          r = train_expert(config.env, spec_for(job.cell), q, job.seed);
        }
        write_run(dir, r, cell_meta(job.cell, job.seed, budget));
        char mean[32];
        std::snprintf(mean, sizeof mean, "%.3f", r.final_summary.mean);
        log(tag + ": final mean " + mean);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failed.exchange(true)) failure = "grid cell " + tag + " failed: " + e.what();
        return;
      }
    }
  };
  const std::size_t threads = std::min(options.parallel_cells, jobs.size());
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  if (failed) throw std::runtime_error(failure);

  // The table is always rebuilt from disk so resumed and fresh grids agree.
  ResultTable table;
  for (const Cell& c : all_cells()) {
    ResultRow row;
    row.cell = c;
    row.params = count_params(spec_for(c));
    for (std::uint64_t seed : config.seeds) {
      const auto dir = cell_dir(options.out, c, seed);
      SeedResult s;
      s.seed = seed;
      s.rewards = read_rewards_csv((dir / "final_rewards.csv").string());
      s.summary = summarize(s.rewards);
      std::ifstream mf(dir / "meta.json");
      s.train_iters = json::parse(mf).value("train_iters", std::size_t{0});
      row.seeds.push_back(std::move(s));
    }
    table.rows.push_back(std::move(row));
  }
  write_text(options.out / "results.csv", table.to_csv());
  write_text(options.out / "table.txt", table.to_text());
  return table;
}

}  // namespace rldc
