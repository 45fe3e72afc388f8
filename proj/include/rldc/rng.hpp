#pragma once

#include <cstdint>
#include <cstddef>

namespace rldc {

// SplitMix64 with the reference constants. Every stochastic choice in the
// project (spawn columns, weight init, replay sampling, exploration) draws
// from one of these so runs replay bit-exactly across implementations.
class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  constexpr double next_double() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, n) via the high word of a 64x64 multiply.
  constexpr std::size_t uniform_index(std::size_t n) noexcept {
    const unsigned __int128 wide =
        static_cast<unsigned __int128>(next()) * static_cast<unsigned __int128>(n);
    return static_cast<std::size_t>(wide >> 64);
  }

  // Uniform in [lo, hi).
  constexpr double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * next_double();
  }

  constexpr std::uint64_t state() const noexcept { return state_; }

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

// Independent child seed for (base, stream, index); used to give every
// episode, network and buffer its own reproducible stream.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream,
                                    std::uint64_t index = 0) noexcept {
  std::uint64_t h = SplitMix64::mix(base + 0x9E3779B97F4A7C15ULL);
  h = SplitMix64::mix(h ^ (stream * 0xD1B54A32D192ED03ULL + 0x632BE59BD9B4E019ULL));
  h = SplitMix64::mix(h ^ (index * 0x8CB92BA72F3D8DD7ULL + 0x2545F4914F6CDD1DULL));
  return h;
}

// Stream tags for derive_seed.
namespace streams {
inline constexpr std::uint64_t kTrainEnv = 1;
inline constexpr std::uint64_t kExploration = 2;
inline constexpr std::uint64_t kReplay = 3;
inline constexpr std::uint64_t kInit = 4;
inline constexpr std::uint64_t kEvalEnv = 5;
inline constexpr std::uint64_t kEvalPolicy = 6;
inline constexpr std::uint64_t kFinalEnv = 7;
inline constexpr std::uint64_t kFinalPolicy = 8;
inline constexpr std::uint64_t kGridCell = 9;
inline constexpr std::uint64_t kVisualize = 10;
}  // namespace streams

}  // namespace rldc
