#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "error.hpp"

namespace allnet {

/// Extent of a rank-4 tensor in (batch, channels, height, width) order.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t numel() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr std::size_t per_sample() const { return c * h * w; }

  constexpr bool valid() const { return n >= 1 && c >= 1 && h >= 1 && w >= 1; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    std::ostringstream os;
    os << '(' << n << ", " << c << ", " << h << ", " << w << ')';
    return os.str();
  }
};

/// Dense rank-4 array, row-major in (N, C, H, W). A plain value type.
template <typename T> class BasicTensor {
public:
  using value_type = T;

  BasicTensor() : BasicTensor(Shape{}) {}

  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(shape) {
    if (!shape.valid()) throw ShapeError("tensor shape must be positive, got " + shape.str());
    data_.assign(shape.numel(), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (!shape.valid()) throw ShapeError("tensor shape must be positive, got " + shape.str());
    if (data_.size() != shape.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape.str());
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<T> data() & { return data_; }
  std::span<const T> data() const& { return data_; }
  /// A view into a temporary would dangle.
  std::span<const T> data() && = delete;
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }

  /// Contiguous view of one batch element.
  std::span<T> sample(std::size_t n) {
    return std::span<T>(data_).subspan(n * shape_.per_sample(), shape_.per_sample());
  }
  std::span<const T> sample(std::size_t n) const {
    return std::span<const T>(data_).subspan(n * shape_.per_sample(), shape_.per_sample());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  /// Element-wise conversion to another scalar type.
  template <typename U> BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

/// Channels [begin, end) of every batch element.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::size_t begin, std::size_t end) {
  const Shape& s = x.shape();
  if (begin >= end || end > s.c) {
    throw ShapeError("channel slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for shape " + s.str());
  }
  BasicTensor<T> out(Shape{s.n, end - begin, s.h, s.w});
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    auto src = x.data().subspan(x.index(n, begin, 0, 0), (end - begin) * plane);
    std::copy(src.begin(), src.end(), out.sample(n).begin());
  }
  return out;
}

} // namespace allnet
