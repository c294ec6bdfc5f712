#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "selfdeblur/errors.hpp"

namespace selfdeblur {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

// Dense row-major array. Every dimension is positive and the element count
// always equals the product of the shape.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_numel(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Rank-3 (C x H x W) accessor.
  T& operator()(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  const T& operator()(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  // Rank-2 accessor.
  T& operator()(std::size_t i, std::size_t j) { return data_[i * shape_.back() + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * shape_.back() + j]; }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    return Tensor(std::move(s), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  double sum() const {
    double s = 0;
    for (T v : data_) s += static_cast<double>(v);
    return s;
  }

  T min() const { return *std::min_element(data_.begin(), data_.end()); }
  T max() const { return *std::max_element(data_.begin(), data_.end()); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& s) {
    if (s.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (std::size_t d : s)
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(s));
  }

  Shape shape_;
  std::vector<T> data_;
};

// Rank-3 view helpers used throughout the image code.
template <class T>
void require_rank(const Tensor<T>& t, std::size_t r, const char* what) {
  if (t.rank() != r)
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(t.shape()));
}

template <class T>
Tensor<T> crop3(const Tensor<T>& x, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  require_rank(x, 3, "crop");
  if (top + h > x.dim(1) || left + w > x.dim(2))
    throw DimensionError("crop window exceeds " + shape_str(x.shape()));
  Tensor<T> out({x.dim(0), h, w});
  for (std::size_t c = 0; c < x.dim(0); ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out(c, i, j) = x(c, top + i, left + j);
  return out;
}

// Central h x w crop.
template <class T>
Tensor<T> center_crop(const Tensor<T>& x, std::size_t h, std::size_t w) {
  require_rank(x, 3, "center_crop");
  if (h > x.dim(1) || w > x.dim(2))
    throw DimensionError("center crop larger than " + shape_str(x.shape()));
  return crop3(x, (x.dim(1) - h) / 2, (x.dim(2) - w) / 2, h, w);
}

}  // namespace selfdeblur
