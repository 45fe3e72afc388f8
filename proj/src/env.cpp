#include "rldc/env.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rldc/image_io.hpp"
#include "rldc/rng.hpp"

namespace rldc {

std::string to_string(Game game) { return game == Game::catch_game ? "catch" : "tunnel"; }

Game parse_game(const std::string& name) {
  if (name == "catch") return Game::catch_game;
  if (name == "tunnel") return Game::tunnel;
  throw std::invalid_argument("unknown game '" + name + "' (expected catch or tunnel)");
}

void EnvConfig::validate() const {
  if (grid_h < 2 || grid_w < static_cast<std::size_t>(kPaddleWidth)) {
    throw std::invalid_argument("env: grid must be at least 2 rows and " +
                                std::to_string(kPaddleWidth) + " columns");
  }
  if (game == Game::tunnel && grid_h < kBrickRows + 4) {
    throw std::invalid_argument("env: tunnel needs at least " + std::to_string(kBrickRows + 4) +
                                " grid rows");
  }
  const std::size_t area_h = draw_score ? render_h - std::min(render_h, kScoreStripRows) : render_h;
  if (area_h < grid_h || render_w < grid_w) {
    throw std::invalid_argument("env: render size " + std::to_string(render_h) + "x" +
                                std::to_string(render_w) + " smaller than grid " +
                                std::to_string(grid_h) + "x" + std::to_string(grid_w));
  }
  if (frame_stack < 1) throw std::invalid_argument("env: frame_stack must be >= 1");
  if (max_steps < 1) throw std::invalid_argument("env: max_steps must be >= 1");
}

int PixelBox::distance(int y, int x) const noexcept {
  const int dy = y < top ? top - y : (y > bottom ? y - bottom : 0);
  const int dx = x < left ? left - x : (x > right ? x - right : 0);
  return std::max(dy, dx);
}

namespace {

struct Area {
  std::size_t top, h, w;
};

Area game_area(const EnvConfig& c) {
  const std::size_t top = c.draw_score ? kScoreStripRows : 0;
  return {top, c.render_h - top, c.render_w};
}

// Pixel span [first, last] that nearest-neighbor maps onto grid cell `cell`.
std::pair<int, int> cell_span(std::size_t cell, std::size_t cells, std::size_t pixels) {
  const std::size_t first = (cell * pixels + cells - 1) / cells;
  const std::size_t end = ((cell + 1) * pixels + cells - 1) / cells;
  return {static_cast<int>(first), static_cast<int>(end) - 1};
}

bool inside(const GameState& s, const EnvConfig& c) {
  return s.ball_row >= 0 && s.ball_row < static_cast<int>(c.grid_h) && s.ball_col >= 0 &&
         s.ball_col < static_cast<int>(c.grid_w);
}

}  // namespace

Tensor render_frame(const EnvConfig& config, const GameState& state) {
  const Area area = game_area(config);
  const std::size_t gh = config.grid_h, gw = config.grid_w;
  std::vector<double> cells(gh * gw, 0.0);
  if (state.bricks.size() == cells.size()) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (state.bricks[i] != 0) cells[i] = kBrickIntensity;
    }
  }
  for (int k = 0; k < kPaddleWidth; ++k) {
    const int col = state.paddle + k;
    if (col >= 0 && col < static_cast<int>(gw)) cells[(gh - 1) * gw + col] = kPaddleIntensity;
  }
  if (inside(state, config)) cells[state.ball_row * gw + state.ball_col] = kBallIntensity;

  Tensor frame({config.render_h, config.render_w});
  std::vector<std::size_t> col_of(area.w);
  for (std::size_t x = 0; x < area.w; ++x) col_of[x] = x * gw / area.w;
  for (std::size_t y = 0; y < area.h; ++y) {
    const std::size_t r = y * gh / area.h;
    double* row = frame.data() + (area.top + y) * config.render_w;
    for (std::size_t x = 0; x < area.w; ++x) row[x] = cells[r * gw + col_of[x]];
  }
  if (config.draw_score) {
    const std::size_t ticks = std::min<std::size_t>(static_cast<std::size_t>(std::max(state.score, 0)),
                                                    (config.render_w + 1) / 2);
    for (std::size_t t = 0; t < ticks; ++t) {
      for (std::size_t y = 0; y < kScoreStripRows; ++y) frame[y * config.render_w + 2 * t] = 1.0;
    }
  }
  return frame;
}

EntityBoxes entity_boxes(const EnvConfig& config, const GameState& state) {
  const Area area = game_area(config);
  EntityBoxes boxes;
  const int top = static_cast<int>(area.top);
  if (inside(state, config)) {
    const auto [y0, y1] = cell_span(static_cast<std::size_t>(state.ball_row), config.grid_h, area.h);
    const auto [x0, x1] = cell_span(static_cast<std::size_t>(state.ball_col), config.grid_w, area.w);
    boxes.ball = {top + y0, x0, top + y1, x1};
  }
  const int first = std::max(state.paddle, 0);
  const int last = std::min(state.paddle + kPaddleWidth - 1, static_cast<int>(config.grid_w) - 1);
  if (first <= last) {
    const auto [y0, y1] = cell_span(config.grid_h - 1, config.grid_h, area.h);
    const auto [x0, xa] = cell_span(static_cast<std::size_t>(first), config.grid_w, area.w);
    const auto [xb, x1] = cell_span(static_cast<std::size_t>(last), config.grid_w, area.w);
    (void)xa;
    (void)xb;
    boxes.paddle = {top + y0, x0, top + y1, x1};
  }
  if (config.draw_score) {
    boxes.score_strip = {0, 0, static_cast<int>(kScoreStripRows) - 1,
                         static_cast<int>(config.render_w) - 1};
  }
  return boxes;
}

int scripted_optimal_action(const EnvConfig& /*config*/, const GameState& state) {
  if (state.ball_col < state.paddle) return kActionLeft;
  if (state.ball_col > state.paddle + kPaddleWidth - 1) return kActionRight;
  return kActionStay;
}

Environment::Environment(EnvConfig config) : config_(config) {
  config_.validate();
  frames_.assign(config_.frame_stack, Tensor({config_.render_h, config_.render_w}));
}

Observation Environment::reset() { return reset(config_.seed); }

Observation Environment::reset(std::uint64_t seed) {
  SplitMix64 rng(seed);
  GameState s;
  const int w = static_cast<int>(config_.grid_w);
  const int h = static_cast<int>(config_.grid_h);
  s.paddle = (w - kPaddleWidth) / 2;
  if (config_.game == Game::catch_game) {
    s.ball_row = 0;
    s.ball_col = static_cast<int>(rng.uniform_index(config_.grid_w));
    s.ball_drow = 1;
    s.ball_dcol = 0;
  } else {
    s.ball_row = h - 2;
    s.ball_col = static_cast<int>(rng.uniform_index(config_.grid_w));
    s.ball_drow = -1;
    s.ball_dcol = rng.uniform_index(2) == 0 ? -1 : 1;
    s.bricks.assign(config_.grid_h * config_.grid_w, 0);
    for (std::size_t r = 1; r <= kBrickRows; ++r) {
      std::fill_n(s.bricks.begin() + static_cast<std::ptrdiff_t>(r * config_.grid_w),
                  config_.grid_w, std::uint8_t{1});
    }
  }
  return set_state(std::move(s));
}

Observation Environment::set_state(GameState state) {
  state_ = std::move(state);
  const Tensor frame = render_frame(config_, state_);
  for (auto& f : frames_) f = frame;
  has_reset_ = true;
  return observe();
}

Observation Environment::observe() const {
  const std::size_t plane = config_.render_h * config_.render_w;
  Observation obs{Tensor({config_.frame_stack, config_.render_h, config_.render_w})};
  for (std::size_t k = 0; k < frames_.size(); ++k) {
    std::copy_n(frames_[k].data(), plane, obs.frames.data() + k * plane);
  }
  return obs;
}

void Environment::push_frame() {
  std::rotate(frames_.begin(), frames_.begin() + 1, frames_.end());
  frames_.back() = render_frame(config_, state_);
}

StepResult Environment::step(int action) {
  if (action < 0 || action >= static_cast<int>(kNumActions)) {
    throw std::invalid_argument("env: action " + std::to_string(action) + " out of range [0, " +
                                std::to_string(kNumActions) + ")");
  }
  if (!has_reset_) throw std::logic_error("env: step before reset");
  if (state_.terminal) throw std::logic_error("env: step after terminal; call reset first");

  const int max_paddle = static_cast<int>(config_.grid_w) - kPaddleWidth;
  state_.paddle = std::clamp(state_.paddle + (action - kActionStay), 0, max_paddle);
  const double reward =
      config_.game == Game::catch_game ? advance_catch() : advance_tunnel();
  ++state_.steps;
  if (config_.game == Game::tunnel && state_.steps >= config_.max_steps) state_.terminal = true;
  push_frame();
  return {observe(), reward, state_.terminal};
}

double Environment::advance_catch() {
  GameState& s = state_;
  s.ball_row += 1;
  if (s.ball_row < static_cast<int>(config_.grid_h) - 1) return 0.0;
  s.terminal = true;
  const bool caught = s.ball_col >= s.paddle && s.ball_col < s.paddle + kPaddleWidth;
  const int reward = caught ? 1 : -1;
  s.score += reward;
  return reward;
}

double Environment::advance_tunnel() {
  GameState& s = state_;
  const int h = static_cast<int>(config_.grid_h);
  const int w = static_cast<int>(config_.grid_w);
  int dr = s.ball_drow;
  int dc = s.ball_dcol;
  if (s.ball_col + dc < 0 || s.ball_col + dc >= w) dc = -dc;
  if (s.ball_row + dr < 0) dr = -dr;
  const int tr = s.ball_row + dr;
  const int tc = s.ball_col + dc;
  double reward = 0.0;
  const std::size_t target = static_cast<std::size_t>(tr * w + tc);
  if (tr < h && s.bricks[target] != 0) {
    s.bricks[target] = 0;
    reward = 1.0;
    s.score += 1;
    dr = -dr;
    if (std::none_of(s.bricks.begin(), s.bricks.end(), [](std::uint8_t b) { return b != 0; })) {
      s.terminal = true;
    }
  } else if (tr == h - 1 && tc >= s.paddle && tc < s.paddle + kPaddleWidth) {
    dr = -1;
  } else {
    s.ball_row = tr;
    s.ball_col = tc;
    if (tr >= h - 1) {
      s.terminal = true;
      reward = -1.0;
      s.score -= 1;
    }
  }
  s.ball_drow = dr;
  s.ball_dcol = dc;
  return reward;
}

void dump_trajectory(const std::filesystem::path& dir, std::span<const Tensor> frames,
                     std::span<const int> actions, std::span<const double> rewards) {
  std::filesystem::create_directories(dir);
  nlohmann::json doc;
  doc["frames"] = nlohmann::json::array();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.pgm", i);
    write_pgm(dir / name, frames[i]);
    doc["frames"].push_back(name);
  }
  doc["actions"] = std::vector<int>(actions.begin(), actions.end());
  doc["rewards"] = std::vector<double>(rewards.begin(), rewards.end());
  std::ofstream out(dir / "trajectory.json");
  out << doc.dump(2) << "\n";
}

}  // namespace rldc
