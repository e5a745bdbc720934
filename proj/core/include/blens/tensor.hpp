#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "blens/error.hpp"

namespace blens {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

std::string shape_to_string(const Shape& shape);

/// Dense row-major array. The library stores everything as float; the double
/// instantiation exists for high-precision re-evaluation of forward passes.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_to_string(shape_));
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  /// Number of elements in one slice along the leading axis.
  std::size_t row_size() const { return shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0]; }
  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }

  std::span<T> row(std::size_t i) { return std::span<T>(data_).subspan(i * row_size(), row_size()); }
  std::span<const T> row(std::size_t i) const {
    return std::span<const T>(data_).subspan(i * row_size(), row_size());
  }

  BasicTensor reshaped(Shape shape) const& {
    BasicTensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  BasicTensor reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }

  void reshape(Shape shape) {
    if (shape_numel(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    shape_ = std::move(shape);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  /// Copies the selected leading-axis slices into a new tensor.
  BasicTensor gather_rows(std::span<const std::size_t> indices) const {
    Shape shape = shape_;
    shape[0] = indices.size();
    BasicTensor out(shape);
    const std::size_t stride = row_size();
    for (std::size_t k = 0; k < indices.size(); ++k) {
      auto src = row(indices[k]);
      std::copy(src.begin(), src.end(), out.data_.begin() + static_cast<std::ptrdiff_t>(k * stride));
    }
    return out;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// Stacks equally shaped samples along a new leading axis.
Tensor stack_rows(std::span<const std::vector<float>> rows);

/// Returns true when every element is finite.
bool all_finite(std::span<const float> values);

double dot(std::span<const float> a, std::span<const float> b);
double l2_norm(std::span<const float> a);
/// Returns a/||a||; throws InvalidArgument for a zero vector.
std::vector<float> normalized(std::span<const float> a);
double cosine_similarity(std::span<const float> a, std::span<const float> b);

}  // namespace blens
