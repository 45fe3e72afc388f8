#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rldc/tensor.hpp"

namespace rldc {

enum class Game { catch_game, tunnel };

std::string to_string(Game game);
Game parse_game(const std::string& name);

struct EnvConfig {
  Game game = Game::catch_game;
  std::size_t grid_h = 10;
  std::size_t grid_w = 10;
  std::size_t render_h = 44;
  std::size_t render_w = 44;
  std::size_t frame_stack = 4;
  bool draw_score = false;
  std::uint64_t seed = 0;
  // Tunnel only: episodes are truncated (reward 0) after this many steps.
  std::size_t max_steps = 200;

  void validate() const;
  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

inline constexpr std::size_t kNumActions = 3;
inline constexpr int kActionLeft = 0;
inline constexpr int kActionStay = 1;
inline constexpr int kActionRight = 2;
inline constexpr int kPaddleWidth = 2;
inline constexpr std::size_t kScoreStripRows = 2;
inline constexpr std::size_t kBrickRows = 2;  // Tunnel bricks fill grid rows 1..2

inline constexpr double kBallIntensity = 1.0;
inline constexpr double kPaddleIntensity = 2.0 / 3.0;
inline constexpr double kBrickIntensity = 1.0 / 3.0;

struct GameState {
  int ball_row = 0;
  int ball_col = 0;
  int ball_drow = 1;
  int ball_dcol = 0;
  int paddle = 0;  // leftmost paddle column
  std::vector<std::uint8_t> bricks;  // row-major grid, 1 = brick present
  int score = 0;
  std::size_t steps = 0;
  bool terminal = false;

  friend bool operator==(const GameState&, const GameState&) = default;
};

struct Observation {
  Tensor frames;  // [frame_stack, render_h, render_w], newest last
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool terminal = false;
};

// Inclusive pixel rectangle in frame coordinates.
struct PixelBox {
  int top = 0;
  int left = 0;
  int bottom = -1;
  int right = -1;

  bool empty() const noexcept { return bottom < top || right < left; }
  // Chebyshev distance from (y, x) to the box; 0 inside.
  int distance(int y, int x) const noexcept;
};

struct EntityBoxes {
  PixelBox ball;
  PixelBox paddle;
  PixelBox score_strip;  // empty unless draw_score
};

// Rendering is a pure function of (config, state).
Tensor render_frame(const EnvConfig& config, const GameState& state);
EntityBoxes entity_boxes(const EnvConfig& config, const GameState& state);

// Moves the paddle toward the ball's column; stays when already under it.
int scripted_optimal_action(const EnvConfig& config, const GameState& state);

class Environment {
 public:
  explicit Environment(EnvConfig config);

  const EnvConfig& config() const noexcept { return config_; }
  const GameState& state() const noexcept { return state_; }

  Observation reset();  // uses config().seed
  Observation reset(std::uint64_t seed);
  StepResult step(int action);

  // Replaces the game state and refills the frame stack with its rendering.
  Observation set_state(GameState state);

  Observation observe() const;
  const Tensor& latest_frame() const noexcept { return frames_.back(); }
  bool terminal() const noexcept { return state_.terminal; }

 private:
  void push_frame();
  double advance_catch();
  double advance_tunnel();

  EnvConfig config_;
  GameState state_;
  std::vector<Tensor> frames_;  // oldest first, size frame_stack
  bool has_reset_ = false;
};

// Writes frame_NNNN.pgm for each frame plus trajectory.json listing actions
// and rewards.
void dump_trajectory(const std::filesystem::path& dir, std::span<const Tensor> frames,
                     std::span<const int> actions, std::span<const double> rewards);

}  // namespace rldc
