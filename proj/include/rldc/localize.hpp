#pragma once

// Weak-localization heatmaps from the last conv layer's activation maps.
//
// A map is min-max normalized, upsampled to the frame with align-corners
// bilinear interpolation and blended into the red channel of the frame.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rldc/checkpoint.hpp"
#include "rldc/env.hpp"
#include "rldc/network.hpp"

namespace rldc {

inline constexpr double kDefaultOverlayAlpha = 0.5;

// (x - min) / (max - min); all zeros for a constant map.
Tensor normalize_map(const Tensor& raw);

// Source coordinate of output index i is i*(in-1)/(out-1), or 0 when out = 1.
Tensor bilinear_upsample(const Tensor& map, std::size_t out_h, std::size_t out_w);

// red = a*heat + (1-a)*gray, green = blue = (1-a)*gray, clamped to [0, 1].
Tensor overlay(const Tensor& frame, const Tensor& heat, double alpha = kDefaultOverlayAlpha);

// Elementwise max over channels of [C, h, w].
Tensor aggregate_map(const Tensor& maps);

// Frame-space position (y, x) of a map cell under the align-corners mapping;
// a single-row or single-column map maps to the frame's center line.
std::pair<double, double> cell_to_frame(std::size_t row, std::size_t col, std::size_t map_h,
                                        std::size_t map_w, std::size_t frame_h,
                                        std::size_t frame_w);

struct HeatmapFrame {
  std::string channel;  // channel index or "aggregate"
  Tensor raw;           // [h', w']
  Tensor normalized;    // [h', w']
  Tensor upsampled;     // [H, W]
  Tensor overlay;       // [H, W, 3]
};

HeatmapFrame make_heatmap(const std::string& channel, const Tensor& raw, const Tensor& frame,
                          double alpha = kDefaultOverlayAlpha);

struct ExportOptions {
  std::vector<std::size_t> channels;  // the aggregate map is always exported
  double alpha = kDefaultOverlayAlpha;
  bool raw_pgm = false;  // also write the normalized raw maps as PGM
  std::size_t max_steps = 1000;
};

struct ExportManifest {
  std::vector<std::filesystem::path> files;  // relative to the output directory
  std::size_t steps = 0;
  double total_reward = 0.0;
};

// Plays one greedy episode from env.reset(seed) and writes per-step overlays
// plus manifest.jsonl (one JSON record per step) into out_dir.
ExportManifest export_episode(const Checkpoint& checkpoint, const EnvConfig& env,
                              std::uint64_t seed, const std::filesystem::path& out_dir,
                              const ExportOptions& options = {});

// Replaces the frame-space aggregate heatmap; used to inject synthetic maps.
using HeatmapOverride = std::function<Tensor(const EnvConfig&, const GameState&, const Tensor&)>;

struct LocalizationReport {
  std::size_t steps = 0;
  std::size_t hits = 0;         // argmax within radius of the ball or paddle
  std::size_t score_hits = 0;   // argmax inside the score strip
  std::size_t flat_steps = 0;   // constant aggregate map; counted as a miss
  double fraction = 0.0;
  double score_fraction = 0.0;
};

// Greedy episodes, one per seed. At every step the argmax of the upsampled
// aggregate map is compared against the ball and paddle boxes (Chebyshev
// distance <= radius pixels) and, when draw_score is on, the score strip.
LocalizationReport localization_score(const Network& network, const EnvConfig& env,
                                      std::span<const std::uint64_t> seeds, int radius,
                                      const HeatmapOverride& override_heatmap = {},
                                      std::size_t max_steps = 1000);

}  // namespace rldc
