#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "helio/error.hpp"

namespace helio {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Dense row-major tensor. Image batches use NCHW layout.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{})
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw Error(ErrorKind::ShapeMismatch, "data length does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // 4-D accessors (N, C, H, W).
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  void zero() { fill(T{}); }

  BasicTensor reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
      throw Error(ErrorKind::ShapeMismatch,
                  "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  bool operator==(const BasicTensor& other) const = default;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t) {
  std::vector<To> out(t.values().begin(), t.values().end());
  return BasicTensor<To>(t.shape(), std::move(out));
}

void require_same_shape(const Shape& a, const Shape& b, std::string_view what);

// Channel-wise concatenation of two NCHW tensors with equal N, H, W.
Tensor concat_channels(const Tensor& a, const Tensor& b);
// Splits an NCHW gradient back into its first `channels_a` channels and the rest.
std::pair<Tensor, Tensor> split_channels(const Tensor& t, std::size_t channels_a);

// 2x2 mean pooling on NCHW, and its adjoint.
Tensor avg_pool2(const Tensor& x);
Tensor avg_pool2_backward(const Tensor& grad_out);

// Nearest-neighbour 2x upsampling on NCHW.
Tensor upsample2_nearest(const Tensor& x);

void add_inplace(Tensor& dst, const Tensor& src);

}  // namespace helio
