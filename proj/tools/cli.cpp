#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rldc/checkpoint.hpp"
#include "rldc/distill.hpp"
#include "rldc/dqn.hpp"
#include "rldc/experiment.hpp"
#include "rldc/gradcheck.hpp"
#include "rldc/localize.hpp"
#include "rldc/network.hpp"

namespace rldc {

namespace {

// Flags shared by the training-style subcommands. Config file values are
// applied first, then any flag given on the command line.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> arch;
  std::optional<std::string> env;
  std::optional<std::size_t> iterations;
  std::optional<std::size_t> eval_interval;
  std::optional<std::size_t> eval_episodes;
  std::optional<std::size_t> final_episodes;
  std::optional<std::size_t> render;
  std::optional<std::size_t> grid;
  std::optional<double> lr;
  bool draw_score = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  cmd->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Run seed");
  if (with_out) cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--env", c.env, "Game: catch or tunnel");
  cmd->add_option("--render", c.render, "Square render size in pixels");
  cmd->add_option("--grid", c.grid, "Square grid size in cells");
  cmd->add_flag("--draw-score", c.draw_score, "Draw the score strip above the game");
}

void add_training(CLI::App* cmd, Common& c) {
  cmd->add_option("--iterations", c.iterations, "Training iterations (environment steps)");
  cmd->add_option("--eval-interval", c.eval_interval, "Iterations between periodic evaluations");
  cmd->add_option("--eval-episodes", c.eval_episodes, "Episodes per periodic evaluation");
  cmd->add_option("--final-episodes", c.final_episodes, "Episodes in the final evaluation");
  cmd->add_option("--lr", c.lr, "RMSProp learning rate");
  cmd->add_flag("-q,--quiet", c.quiet, "Do not print progress rows");
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment(c.config);
  if (c.env) cfg.env.game = parse_game(*c.env);
  if (c.render) cfg.env.render_h = cfg.env.render_w = *c.render;
  if (c.grid) cfg.env.grid_h = cfg.env.grid_w = *c.grid;
  if (c.draw_score) cfg.env.draw_score = true;
  if (c.seed) cfg.seeds = {*c.seed};
  if (c.iterations) {
    cfg.dqn.train_iterations = *c.iterations;
    cfg.distill.train_iterations = *c.iterations;
  }
  if (c.eval_interval) cfg.dqn.eval_interval = cfg.distill.eval_interval = *c.eval_interval;
  if (c.eval_episodes) cfg.dqn.eval_episodes = cfg.distill.eval_episodes = *c.eval_episodes;
  if (c.final_episodes) cfg.dqn.final_episodes = cfg.distill.final_episodes = *c.final_episodes;
  if (c.lr) cfg.dqn.optimizer.lr = cfg.distill.optimizer.lr = *c.lr;
  cfg.validate();
  return cfg;
}

RowCallback progress(std::ostream& out, bool quiet) {
  if (quiet) return {};
  return [&out](const EvalRow& r) {
    char buf[160];
    if (r.phase == "train") {
      std::snprintf(buf, sizeof buf, "iter %7zu  train  loss %.6f  epsilon %.3f  %.0fs", r.iter,
                    r.loss_mean, r.epsilon, r.wall_s);
    } else {
      std::snprintf(buf, sizeof buf, "iter %7zu  %-5s  reward %.3f +- %.3f over %zu episodes",
                    r.iter, r.phase.c_str(), r.mean_reward, r.std_reward, r.episodes);
    }
    out << buf << std::endl;
  };
}

std::filesystem::path require_out(const std::string& out) {
  if (out.empty()) throw std::invalid_argument("--out is required");
  return out;
}

void print_final(std::ostream& out, const TrainResult& r, const std::filesystem::path& dir) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "final: %.4f +- %.4f over %zu episodes (best iter %zu)",
                r.final_summary.mean, r.final_summary.std, r.final_rewards.size(), r.best_iter);
  out << buf << "\nwrote " << dir.string() << '\n';
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    std::size_t used = 0;
    const auto v = std::stoull(part, &used);
    if (used != part.size()) throw std::invalid_argument("bad seed '" + part + "'");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw std::invalid_argument("empty seed list");
  return seeds;
}

// Reference figures for the 4x84x84, 512-hidden, 9-action accounting, with
// the resolution of their printed digits.
struct Reference {
  const char* arch;
  const char* label;
  double value;
  double unit;
};

constexpr Reference kReferenceCounts[] = {
    {"expert", "1.68M", 1.68e6, 1e4},
    {"max-same", "115.88K", 115.88e3, 10},
    {"max-halved", "43.1K", 43.1e3, 100},
    {"none-halved", "829.51K", 829.51e3, 10},
};

std::string compare_reference(std::size_t n, const Reference& ref) {
  const double count = static_cast<double>(n);
  const double rounded = std::round(count / ref.unit) * ref.unit;
  const double truncated = std::floor(count / ref.unit) * ref.unit;
  std::string note = std::string("reference ") + ref.label;
  if (std::abs(rounded - ref.value) < 0.5) return note + " (matches)";
  if (std::abs(truncated - ref.value) < 0.5) return note + " (matches when truncated)";
  return note + " (MISMATCH: differs by " + std::to_string(std::llround(count - ref.value)) + ")";
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Q-network distillation and weak-localization toolkit"};
  app.name("rldc");
  app.require_subcommand(1);

  Common expert_opts, distill_opts, eval_opts, ablate_opts, vis_opts;

  auto* train_cmd = app.add_subcommand("train-expert", "Train a Q-network with Q-learning");
  add_common(train_cmd, expert_opts);
  add_training(train_cmd, expert_opts);
  train_cmd->add_option("--arch", expert_opts.arch, "expert, max-same, max-halved or none-halved");

  std::string expert_path;
  auto* distill_cmd = app.add_subcommand("distill", "Distill an expert into a student");
  add_common(distill_cmd, distill_opts);
  add_training(distill_cmd, distill_opts);
  distill_cmd->add_option("--arch", distill_opts.arch, "Student architecture (default max-halved)");
  distill_cmd->add_option("--expert", expert_path, "Expert checkpoint")->required()->check(CLI::ExistingFile);
  std::optional<double> tau_expert, tau_student;
  distill_cmd->add_option("--tau-expert", tau_expert, "Expert softmax temperature");
  distill_cmd->add_option("--tau-student", tau_student, "Student softmax temperature");

  std::string eval_ckpt;
  std::size_t eval_episodes = 100;
  double eval_epsilon = 0.05;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  add_common(eval_cmd, eval_opts);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--episodes", eval_episodes, "Episodes")->capture_default_str();
  eval_cmd->add_option("--epsilon", eval_epsilon, "Exploration rate")->capture_default_str();

  bool resume = false;
  std::size_t parallel_cells = 1;
  std::optional<std::string> seeds_arg;
  std::optional<std::string> grid_expert;
  std::optional<std::size_t> cell_iterations;
  auto* ablate_cmd = app.add_subcommand("ablate", "Run the 8-cell ablation grid");
  add_common(ablate_cmd, ablate_opts);
  ablate_cmd->add_option("--expert-iterations", ablate_opts.iterations, "Expert training iterations");
  ablate_cmd->add_option("--cell-iterations", cell_iterations, "Budget of every non-expert cell");
  ablate_cmd->add_option("--seeds", seeds_arg, "Comma-separated seeds");
  ablate_cmd->add_option("--expert", grid_expert, "Reuse this expert checkpoint for every seed")
      ->check(CLI::ExistingFile);
  ablate_cmd->add_option("--eval-interval", ablate_opts.eval_interval, "Iterations between evaluations");
  ablate_cmd->add_option("--eval-episodes", ablate_opts.eval_episodes, "Episodes per periodic evaluation");
  ablate_cmd->add_option("--final-episodes", ablate_opts.final_episodes, "Episodes in the final evaluation");
  ablate_cmd->add_flag("--resume", resume, "Skip cells whose outputs are complete");
  ablate_cmd->add_option("--parallel-cells", parallel_cells, "Cells trained concurrently")
      ->capture_default_str();

  std::string vis_ckpt;
  std::vector<std::size_t> channels;
  double alpha = kDefaultOverlayAlpha;
  bool raw_pgm = false;
  std::optional<std::size_t> score_episodes;
  int radius = 4;
  auto* vis_cmd = app.add_subcommand("visualize", "Export heatmap overlays for one episode");
  add_common(vis_cmd, vis_opts);
  vis_cmd->add_option("--checkpoint", vis_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  vis_cmd->add_option("--channels", channels, "Channel indices to export besides the aggregate")
      ->delimiter(',');
  vis_cmd->add_option("--alpha", alpha, "Overlay blend factor")->capture_default_str();
  vis_cmd->add_flag("--raw-pgm", raw_pgm, "Also write normalized maps as PGM");
  vis_cmd->add_option("--score-episodes", score_episodes,
                      "Also report the localization score over this many seeded episodes");
  vis_cmd->add_option("--radius", radius, "Localization radius in pixels")->capture_default_str();

  std::string count_arch = "all";
  std::size_t count_actions = 9, count_frames = 4, count_size = 84, count_hidden = 512;
  auto* count_cmd = app.add_subcommand("count-params", "Closed-form parameter counts");
  count_cmd->add_option("--arch", count_arch, "Architecture or 'all'")->capture_default_str();
  count_cmd->add_option("--actions", count_actions, "Number of actions")->capture_default_str();
  count_cmd->add_option("--frames", count_frames, "Stacked frames")->capture_default_str();
  count_cmd->add_option("--size", count_size, "Square input size")->capture_default_str();
  count_cmd->add_option("--hidden", count_hidden, "Hidden layer width")->capture_default_str();

  std::uint64_t gc_seed = 2024;
  std::size_t gc_instances = 20;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad_cmd->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  grad_cmd->add_option("--instances", gc_instances, "Random instances per op")->capture_default_str();

  if (argc <= 1) {
    err << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*train_cmd) {
      const ExperimentConfig cfg = resolve(expert_opts);
      const auto dir = require_out(expert_opts.out);
      const NetworkSpec spec = arch_spec(expert_opts.arch.value_or("expert"), input_shape(cfg.env),
                                         kNumActions, cfg.hidden);
      const std::uint64_t seed = cfg.seeds.front();
      const TrainResult r = train_expert(cfg.env, spec, cfg.dqn, seed,
                                         progress(out, expert_opts.quiet));
      nlohmann::json meta = run_metadata(to_json(cfg), "train-expert");
      meta["arch"] = expert_opts.arch.value_or("expert");
      meta["seed"] = seed;
      meta["params"] = count_params(spec);
      write_run(dir, r, meta);
      print_final(out, r, dir);
      return 0;
    }
    if (*distill_cmd) {
      ExperimentConfig cfg = resolve(distill_opts);
      if (tau_expert) cfg.distill.tau_expert = *tau_expert;
      if (tau_student) cfg.distill.tau_student = *tau_student;
      cfg.distill.validate();
      const auto dir = require_out(distill_opts.out);
      const std::string arch = distill_opts.arch.value_or("max-halved");
      const NetworkSpec spec = arch_spec(arch, input_shape(cfg.env), kNumActions, cfg.hidden);
      const Checkpoint expert = load_checkpoint(expert_path);
      const std::uint64_t seed = cfg.seeds.front();
      const TrainResult r = train_student(expert, spec, cfg.env, cfg.distill, seed,
                                          progress(out, distill_opts.quiet));
      nlohmann::json meta = run_metadata(to_json(cfg), "distill");
      meta["arch"] = arch;
      meta["seed"] = seed;
      meta["params"] = count_params(spec);
      meta["expert"] = std::filesystem::absolute(expert_path).string();
      write_run(dir, r, meta);
      print_final(out, r, dir);
      return 0;
    }
    if (*eval_cmd) {
      const ExperimentConfig cfg = resolve(eval_opts);
      const Network net = network_from(load_checkpoint(eval_ckpt));
      const auto rewards = protocol::final_eval(net, cfg.env, eval_episodes, eval_epsilon,
                                                cfg.seeds.front());
      const Summary s = summarize(rewards);
      char buf[128];
      std::snprintf(buf, sizeof buf, "mean reward %.4f +- %.4f over %zu episodes", s.mean, s.std, rewards.size());
      out << buf << '\n';
      if (!eval_opts.out.empty()) {
        std::filesystem::create_directories(eval_opts.out);
        write_rewards_csv((std::filesystem::path(eval_opts.out) / "rewards.csv").string(), rewards);
      }
      return 0;
    }
    if (*ablate_cmd) {
      ExperimentConfig cfg = resolve(ablate_opts);
      if (ablate_opts.iterations) cfg.distill.train_iterations = 2 * *ablate_opts.iterations;
      if (seeds_arg) cfg.seeds = parse_seed_list(*seeds_arg);
      if (grid_expert) cfg.expert_checkpoint = *grid_expert;
      if (cell_iterations) cfg.cell_iterations = *cell_iterations;
      cfg.validate();
      GridOptions opts;
      opts.out = require_out(ablate_opts.out);
      opts.resume = resume;
      opts.parallel_cells = parallel_cells;
      opts.log = [&out](const std::string& line) { out << line << std::endl; };
      const ResultTable table = run_ablation(cfg, opts);
      out << table.to_text();
      return 0;
    }
    if (*vis_cmd) {
      const ExperimentConfig cfg = resolve(vis_opts);
      const auto dir = require_out(vis_opts.out);
      const Checkpoint ckpt = load_checkpoint(vis_ckpt);
      ExportOptions opts;
      opts.channels = channels;
      opts.alpha = alpha;
      opts.raw_pgm = raw_pgm;
      const std::uint64_t seed = derive_seed(cfg.seeds.front(), streams::kVisualize);
      const ExportManifest m = export_episode(ckpt, cfg.env, seed, dir, opts);
      out << "exported " << m.steps << " steps, " << m.files.size() << " files to " << dir.string()
          << '\n';
      if (score_episodes) {
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = 0; i < *score_episodes; ++i) {
          seeds.push_back(derive_seed(cfg.seeds.front(), streams::kVisualize, i + 1));
        }
        const LocalizationReport rep = localization_score(network_from(ckpt), cfg.env, seeds, radius);
        char buf[200];
        std::snprintf(buf, sizeof buf,
                      "localization: %.4f of %zu steps within %d px of ball or paddle; "
                      "score strip %.4f; flat maps %zu",
                      rep.fraction, rep.steps, radius, rep.score_fraction, rep.flat_steps);
        out << buf << '\n';
      }
      return 0;
    }
    if (*count_cmd) {
      const InputShape input{count_frames, count_size, count_size};
      if (count_arch != "all") {
        out << count_params(arch_spec(count_arch, input, count_actions, count_hidden)) << '\n';
        return 0;
      }
      const NetworkSpec expert = arch_spec("expert", input, count_actions, count_hidden);
      const double expert_n = static_cast<double>(count_params(expert));
      for (const Reference& ref : kReferenceCounts) {
        const std::size_t n = count_params(arch_spec(ref.arch, input, count_actions, count_hidden));
        char buf[200];
        std::snprintf(buf, sizeof buf, "%-12s %10zu  %6.2f%% of expert", ref.arch, n,
                      100.0 * static_cast<double>(n) / expert_n);
        out << buf;
        const bool reference_geometry =
            count_actions == 9 && count_frames == 4 && count_size == 84 && count_hidden == 512;
        if (reference_geometry) out << "  " << compare_reference(n, ref);
        out << '\n';
      }
      return 0;
    }
    if (*grad_cmd) {
      const GradcheckReport rep = run_gradcheck(gc_seed, gc_instances);
      for (const GradcheckCase& c : rep.cases) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%-20s instances %3zu  entries %6zu  max rel err %.3e",
                      c.op.c_str(), c.instances, c.entries, c.max_rel_error);
        out << buf << '\n';
      }
      char buf[96];
      std::snprintf(buf, sizeof buf, "max relative error %.3e (tolerance %.0e)", rep.max_rel_error,
                    kGradcheckTolerance);
      out << buf << '\n';
      return rep.passed() ? 0 : 1;
    }
  } catch (const std::exception& e) {
    err << "rldc: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace rldc
