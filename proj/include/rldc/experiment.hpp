#pragma once

// Configuration, run directories and the 8-cell ablation grid.
//
// Config files are JSON. Every section is optional and every key inside a
// section defaults, but unknown keys are rejected so typos cannot silently
// fall back to defaults.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rldc/distill.hpp"
#include "rldc/dqn.hpp"
#include "rldc/env.hpp"
#include "rldc/network.hpp"

namespace rldc {

nlohmann::json to_json(const EnvConfig& c);
nlohmann::json to_json(const DqnConfig& c);
nlohmann::json to_json(const DistillConfig& c);
// Fills `into` from j; throws std::invalid_argument naming the bad key.
void from_json_strict(const nlohmann::json& j, EnvConfig& into);
void from_json_strict(const nlohmann::json& j, DqnConfig& into);
void from_json_strict(const nlohmann::json& j, DistillConfig& into);

InputShape input_shape(const EnvConfig& env);

enum class Mode { kd, no_kd };
std::string to_string(Mode mode);

struct Cell {
  Mode mode = Mode::no_kd;
  Tail tail = Tail::flatten;
  Width width = Width::same;

  bool is_expert() const noexcept {
    return mode == Mode::no_kd && tail == Tail::flatten && width == Width::same;
  }
  // "no_kd_none_same" etc.
  std::string id() const;
  friend bool operator==(const Cell&, const Cell&) = default;
};

// Table order: KD rows first, then No KD; max before none; same before halved.
std::vector<Cell> all_cells();

struct ExperimentConfig {
  EnvConfig env;
  std::size_t hidden = 512;
  DqnConfig dqn;
  DistillConfig distill;
  std::vector<std::uint64_t> seeds{7};
  // Grid: budget for every non-expert cell (KD and No KD alike); unset
  // means distill.train_iterations.
  std::optional<std::size_t> cell_iterations;
  // Grid: reuse this expert for every seed instead of training one per seed.
  std::optional<std::filesystem::path> expert_checkpoint;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Values that are fixed decisions rather than config, recorded with every run.
nlohmann::json decision_values();
// Config + seeds + code version + decision values.
nlohmann::json run_metadata(const nlohmann::json& config, const std::string& command);

// Writes best.rldc, eval_log.csv, final_rewards.csv and meta.json.
void write_run(const std::filesystem::path& dir, const TrainResult& result,
               const nlohmann::json& metadata);
// A run directory is complete iff its checkpoint decodes and the final
// rewards file parses with the expected episode count.
bool run_complete(const std::filesystem::path& dir, std::size_t final_episodes);

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<double> rewards;
  Summary summary;
  std::size_t train_iters = 0;
};

struct ResultRow {
  Cell cell;
  std::size_t params = 0;
  std::vector<SeedResult> seeds;

  // Median over seeds of the per-seed final means.
  double median_mean() const;
};

struct ResultTable {
  std::vector<ResultRow> rows;

  const ResultRow& row(const Cell& cell) const;
  // One line per (cell, seed):
  // mode,tail,width,params,final_mean,final_std,episodes,train_iters,seed
  std::string to_csv() const;
  // Aligned text laid out like the paper's ablation table.
  std::string to_text() const;
};

struct GridOptions {
  std::filesystem::path out;
  bool resume = false;
  std::size_t parallel_cells = 1;
  std::function<void(const std::string&)> log;  // progress lines
};

ResultTable run_ablation(const ExperimentConfig& config, const GridOptions& options);

std::string code_version();

}  // namespace rldc
