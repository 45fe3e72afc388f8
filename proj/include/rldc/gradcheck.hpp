#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rldc {

inline constexpr double kGradcheckStep = 1e-5;
inline constexpr double kGradcheckTolerance = 1e-5;

// |a - n| / max(|a|, |n|, 1e-6). The floor keeps entries that are zero up to
// rounding from dominating the report.
double relative_error(double analytic, double numeric);

struct GradcheckCase {
  std::string op;
  std::size_t instances = 0;
  std::size_t entries = 0;  // gradient entries compared
  double max_rel_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double max_rel_error = 0.0;

  bool passed(double tolerance = kGradcheckTolerance) const {
    return !cases.empty() && max_rel_error < tolerance;
  }
};

// Central differences in double precision against every analytic backward:
// conv2d, linear, relu, global max pool, temperature softmax + KL, Huber,
// and whole tiny networks under the Q-learning and distillation losses.
// Random instances are drawn clear of ReLU and max-pool switch points.
GradcheckReport run_gradcheck(std::uint64_t seed = 2024, std::size_t instances = 20);

}  // namespace rldc
