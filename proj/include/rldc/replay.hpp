#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rldc/env.hpp"
#include "rldc/rng.hpp"

namespace rldc {

// Observation frames stored at 8-bit precision. The renderer only emits
// multiples of 1/3 (and 1/255 is a divisor of those), so decode(encode(x))
// is bit-exact for every observation the environments produce.
class PackedObservation {
 public:
  PackedObservation() = default;
  explicit PackedObservation(const Observation& obs);

  const Shape& shape() const noexcept { return shape_; }
  Observation unpack() const;
  // Writes the decoded values into dst (size must equal the element count).
  void unpack_into(double* dst) const;

 private:
  Shape shape_;
  std::vector<std::uint8_t> levels_;
};

struct Transition {
  PackedObservation state;
  int action = 0;
  double reward = 0.0;
  PackedObservation next_state;
  bool terminal = false;
};

/// Fixed-capacity FIFO with uniform sampling (with replacement).
template <typename T>
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
    if (capacity_ == 0) throw std::invalid_argument("replay: capacity must be >= 1");
    items_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }

  void push(T item) {
    if (items_.size() < capacity_) {
      items_.push_back(std::move(item));
    } else {
      items_[head_] = std::move(item);
      head_ = (head_ + 1) % capacity_;
    }
  }

  // i = 0 is the oldest retained item.
  const T& at(std::size_t i) const {
    if (i >= items_.size()) throw std::out_of_range("replay: index out of range");
    return items_[(head_ + i) % items_.size()];
  }

  std::vector<std::size_t> sample_indices(std::size_t batch) {
    if (items_.empty()) throw std::logic_error("replay: sampling from an empty buffer");
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = rng_.uniform_index(items_.size());
    return idx;
  }

  std::vector<const T*> sample(std::size_t batch) {
    std::vector<const T*> out;
    out.reserve(batch);
    for (std::size_t i : sample_indices(batch)) out.push_back(&at(i));
    return out;
  }

 private:
  std::size_t capacity_;
  std::vector<T> items_;
  std::size_t head_ = 0;  // slot of the oldest item once full
  SplitMix64 rng_;
};

}  // namespace rldc
