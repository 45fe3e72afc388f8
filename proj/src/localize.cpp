#include "rldc/localize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rldc/evaluation.hpp"
#include "rldc/image_io.hpp"

namespace rldc {

namespace {

void require_2d(const Tensor& t, const char* what) {
  if (t.rank() != 2 || t.dim(0) == 0 || t.dim(1) == 0) {
    throw std::invalid_argument(std::string(what) + " must be a nonempty [H, W] map, got " +
                                shape_string(t.shape()));
  }
}

double source_coord(std::size_t i, std::size_t in, std::size_t out) {
  if (out == 1) return 0.0;
  return static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
}

// Position of the first maximum in row-major order.
std::pair<std::size_t, std::size_t> argmax_2d(const Tensor& map) {
  const std::size_t flat = argmax(map.values());
  return {flat / map.dim(1), flat % map.dim(1)};
}

std::string step_name(std::size_t step, const std::string& channel, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "step_%04zu_%s.%s", step, channel.c_str(), ext);
  return buf;
}

}  // namespace

Tensor normalize_map(const Tensor& raw) {
  require_2d(raw, "normalize_map: input");
  const auto [lo, hi] = std::minmax_element(raw.values().begin(), raw.values().end());
  const double min = *lo, range = *hi - *lo;
  Tensor out(raw.shape());
  if (range == 0.0) return out;
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - min) / range;
  return out;
}

Tensor bilinear_upsample(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  require_2d(map, "bilinear_upsample: input");
  const std::size_t h = map.dim(0), w = map.dim(1);
  if (out_h < h || out_w < w) {
    throw std::invalid_argument("bilinear_upsample: output " + std::to_string(out_h) + "x" +
                                std::to_string(out_w) + " is smaller than input " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor out({out_h, out_w});
  for (std::size_t i = 0; i < out_h; ++i) {
    const double sy = source_coord(i, h, out_h);
    const std::size_t y0 = std::min(static_cast<std::size_t>(sy), h - 1);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::size_t j = 0; j < out_w; ++j) {
      const double sx = source_coord(j, w, out_w);
      const std::size_t x0 = std::min(static_cast<std::size_t>(sx), w - 1);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = map[y0 * w + x0] * (1.0 - fx) + map[y0 * w + x1] * fx;
      const double bottom = map[y1 * w + x0] * (1.0 - fx) + map[y1 * w + x1] * fx;
      out[i * out_w + j] = top * (1.0 - fy) + bottom * fy;
    }
  }
  return out;
}

Tensor overlay(const Tensor& frame, const Tensor& heat, double alpha) {
  require_2d(frame, "overlay: frame");
  if (heat.shape() != frame.shape()) {
    throw std::invalid_argument("overlay: heat " + shape_string(heat.shape()) +
                                " does not match frame " + shape_string(frame.shape()));
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("overlay: alpha must be in [0, 1]");
  Tensor out({frame.dim(0), frame.dim(1), 3});
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const double base = (1.0 - alpha) * frame[i];
    out[3 * i] = std::clamp(alpha * heat[i] + base, 0.0, 1.0);
    out[3 * i + 1] = std::clamp(base, 0.0, 1.0);
    out[3 * i + 2] = std::clamp(base, 0.0, 1.0);
  }
  return out;
}

Tensor aggregate_map(const Tensor& maps) {
  if (maps.rank() != 3 || maps.dim(0) == 0) {
    throw std::invalid_argument("aggregate_map: expected [C, h, w], got " + shape_string(maps.shape()));
  }
  const std::size_t c = maps.dim(0), hw = maps.dim(1) * maps.dim(2);
  Tensor out({maps.dim(1), maps.dim(2)});
  std::copy(maps.data(), maps.data() + hw, out.data());
  for (std::size_t k = 1; k < c; ++k) {
    for (std::size_t i = 0; i < hw; ++i) out[i] = std::max(out[i], maps[k * hw + i]);
  }
  return out;
}

std::pair<double, double> cell_to_frame(std::size_t row, std::size_t col, std::size_t map_h,
                                        std::size_t map_w, std::size_t frame_h,
                                        std::size_t frame_w) {
  auto one = [](std::size_t i, std::size_t in, std::size_t out) {
    if (in == 1) return static_cast<double>(out - 1) / 2.0;
    return static_cast<double>(i) * static_cast<double>(out - 1) / static_cast<double>(in - 1);
  };
  return {one(row, map_h, frame_h), one(col, map_w, frame_w)};
}

HeatmapFrame make_heatmap(const std::string& channel, const Tensor& raw, const Tensor& frame,
                          double alpha) {
  require_2d(frame, "make_heatmap: frame");
  HeatmapFrame h;
  h.channel = channel;
  h.raw = raw;
  h.normalized = normalize_map(raw);
  h.upsampled = bilinear_upsample(h.normalized, frame.dim(0), frame.dim(1));
  h.overlay = overlay(frame, h.upsampled, alpha);
  return h;
}

ExportManifest export_episode(const Checkpoint& checkpoint, const EnvConfig& env_cfg,
                              std::uint64_t seed, const std::filesystem::path& out_dir,
                              const ExportOptions& options) {
  const Network net = network_from(checkpoint);
  const std::size_t channels = net.spec().final_conv_shape()[0];
  for (std::size_t c : options.channels) {
    if (c >= channels) {
      throw std::invalid_argument("export_episode: channel " + std::to_string(c) +
                                  " out of range (network has " + std::to_string(channels) + ")");
    }
  }
  std::filesystem::create_directories(out_dir);
  Environment env(env_cfg);
  Observation obs = env.reset(seed);
  ExportManifest manifest;
  std::ofstream lines(out_dir / "manifest.jsonl", std::ios::binary);
  if (!lines) throw std::runtime_error("cannot write " + (out_dir / "manifest.jsonl").string());

  for (std::size_t step = 0; !env.terminal() && step < options.max_steps; ++step) {
    const ActivationRecord rec = net.forward(obs.frames, /*capture=*/true);
    const Tensor& frame = env.latest_frame();
    const Tensor& maps = rec.pre_pool_maps;
    const std::size_t mh = maps.dim(1), mw = maps.dim(2);

    std::vector<std::pair<std::string, Tensor>> selected;
    for (std::size_t c : options.channels) {
      Tensor m({mh, mw});
      std::copy(maps.data() + c * mh * mw, maps.data() + (c + 1) * mh * mw, m.data());
      selected.emplace_back(std::to_string(c), std::move(m));
    }
    selected.emplace_back("aggregate", aggregate_map(maps));

    const int action = static_cast<int>(argmax(rec.q_values.values()));
    nlohmann::json record{{"step", step}, {"action", action}};
    nlohmann::json argmaxes = nlohmann::json::object();
    nlohmann::json files = nlohmann::json::array();
    for (const auto& [name, raw] : selected) {
      const HeatmapFrame h = make_heatmap(name, raw, frame, options.alpha);
      const auto [r, c] = argmax_2d(raw);
      const auto [y, x] = cell_to_frame(r, c, mh, mw, frame.dim(0), frame.dim(1));
      argmaxes[name] = {y, x};
      const std::string img = step_name(step, name, "ppm");
      write_ppm(out_dir / img, h.overlay);
      manifest.files.emplace_back(img);
      files.push_back(img);
      if (options.raw_pgm) {
        const std::string pgm = step_name(step, name, "pgm");
        write_pgm(out_dir / pgm, h.normalized);
        manifest.files.emplace_back(pgm);
        files.push_back(pgm);
      }
    }
    const StepResult result = env.step(action);
    record["reward"] = result.reward;
    record["argmax"] = std::move(argmaxes);
    record["files"] = std::move(files);
    lines << record.dump() << '\n';
    manifest.total_reward += result.reward;
    ++manifest.steps;
    obs = result.observation;
  }
  manifest.files.emplace_back("manifest.jsonl");
  return manifest;
}

LocalizationReport localization_score(const Network& network, const EnvConfig& env_cfg,
                                      std::span<const std::uint64_t> seeds, int radius,
                                      const HeatmapOverride& override_heatmap,
                                      std::size_t max_steps) {
  if (radius < 0) throw std::invalid_argument("localization_score: radius must be >= 0");
  LocalizationReport report;
  for (std::uint64_t seed : seeds) {
    Environment env(env_cfg);
    Observation obs = env.reset(seed);
    for (std::size_t step = 0; !env.terminal() && step < max_steps; ++step) {
      const ActivationRecord rec = network.forward(obs.frames, /*capture=*/true);
      const Tensor& frame = env.latest_frame();
      Tensor heat;
      if (override_heatmap) {
        heat = override_heatmap(env_cfg, env.state(), rec.pre_pool_maps);
      } else {
        heat = bilinear_upsample(normalize_map(aggregate_map(rec.pre_pool_maps)), frame.dim(0),
                                 frame.dim(1));
      }
      ++report.steps;
      const auto [lo, hi] = std::minmax_element(heat.values().begin(), heat.values().end());
      if (*lo == *hi) {
        ++report.flat_steps;
      } else {
        const auto [y, x] = argmax_2d(heat);
        const int yi = static_cast<int>(y), xi = static_cast<int>(x);
        const EntityBoxes boxes = entity_boxes(env_cfg, env.state());
        auto near = [&](const PixelBox& b) { return !b.empty() && b.distance(yi, xi) <= radius; };
        if (near(boxes.ball) || near(boxes.paddle)) ++report.hits;
        if (!boxes.score_strip.empty() && boxes.score_strip.distance(yi, xi) == 0) {
          ++report.score_hits;
        }
      }
      obs = env.step(static_cast<int>(argmax(rec.q_values.values()))).observation;
    }
  }
  if (report.steps > 0) {
    report.fraction = static_cast<double>(report.hits) / static_cast<double>(report.steps);
    report.score_fraction = static_cast<double>(report.score_hits) / static_cast<double>(report.steps);
  }
  return report;
}

}  // namespace rldc
