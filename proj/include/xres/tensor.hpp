#pragma once

#include <algorithm>
#include <cstddef>
#include <new>
#include <span>
#include <vector>

#include "xres/errors.hpp"

namespace xres {

// Cache-line aligned allocation. Vectorized reductions split a buffer at its
// first aligned element, so numeric results only repeat exactly run to run
// when every buffer starts at the same alignment.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) {
    return true;
  }
};

using AlignedVector = std::vector<double, AlignedAllocator<double>>;

struct Shape {
  int channels = 0;
  int height = 0;
  int width = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

// Dense channel-major (C, H, W) array of doubles for a single sample.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<double> data)
      : shape_(shape), data_(data.begin(), data.end()) {
    require(data_.size() == shape_.size(), "tensor data does not match shape");
  }

  const Shape& shape() const { return shape_; }
  int channels() const { return shape_.channels; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  std::size_t size() const { return data_.size(); }

  double& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x];
  }
  double at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::span<double> plane(int c) {
    return {data_.data() + static_cast<std::size_t>(c) * shape_.plane(), shape_.plane()};
  }
  std::span<const double> plane(int c) const {
    return {data_.data() + static_cast<std::size_t>(c) * shape_.plane(), shape_.plane()};
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  Tensor& operator+=(const Tensor& other) {
    require(other.shape_ == shape_, "tensor shape mismatch in +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  AlignedVector data_;
};

}  // namespace xres
