#include "rldc/replay.hpp"

#include <algorithm>
#include <cmath>

namespace rldc {

PackedObservation::PackedObservation(const Observation& obs) : shape_(obs.frames.shape()) {
  levels_.resize(obs.frames.size());
  const double* v = obs.frames.data();
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    levels_[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v[i], 0.0, 1.0) * 255.0));
  }
}

Observation PackedObservation::unpack() const {
  Observation obs{Tensor(shape_)};
  unpack_into(obs.frames.data());
  return obs;
}

void PackedObservation::unpack_into(double* dst) const {
  for (std::size_t i = 0; i < levels_.size(); ++i) dst[i] = levels_[i] / 255.0;
}

}  // namespace rldc
