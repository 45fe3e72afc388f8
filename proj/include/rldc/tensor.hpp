#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace rldc {

using Shape = std::vector<std::size_t>;

// Storage for anything handed to Eigen. Its vectorized kernels peel leading
// elements based on the runtime address, so the summation order (and the last
// bits of a result) would otherwise depend on where malloc put the buffer.
// A fixed 64-byte alignment makes every product bit-reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_numel(const Shape& shape) noexcept;
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles with a gradient plane of the same extent.
///
/// The gradient plane is what backward passes write into: every use of a
/// tensor adds its contribution, and zero_grad() resets it to exactly zero.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<double> grad() noexcept { return grad_; }
  std::span<const double> grad() const noexcept { return grad_; }

  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }
  double* grad_data() noexcept { return grad_.data(); }
  const double* grad_data() const noexcept { return grad_.data(); }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  // Bounds-checked multi-index access.
  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  void zero_grad() noexcept;
  void fill(double value) noexcept;

  // Adopts `shape`, reusing storage; values are unspecified afterwards
  // and the gradient plane is zeroed.
  void resize(const Shape& shape);

  // Changes the logical shape; the element count must not change.
  void reshape(Shape shape);
  Tensor reshaped(Shape shape) const;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  AlignedBuffer values_;
  AlignedBuffer grad_;
};

}  // namespace rldc
