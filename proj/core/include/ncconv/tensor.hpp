#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ncconv/error.hpp"

namespace ncconv {

class Rng;

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 4;

std::size_t shape_size(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array of rank 0..4. Owns its storage; copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : shape_{0} {}
  explicit Tensor(Shape shape) : Tensor(std::move(shape), T{0}) {}
  Tensor(Shape shape, T fill) : shape_(std::move(shape)) {
    check_rank();
    data_.assign(shape_size(shape_), fill);
  }
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_rank();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + to_string(shape_));
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
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  // Row-major strides in elements.
  std::vector<std::size_t> strides() const {
    std::vector<std::size_t> s(shape_.size(), 1);
    for (std::size_t i = shape_.size(); i-- > 1;) s[i - 1] = s[i] * shape_[i];
    return s;
  }

  // Contiguous block for index `i` along the leading axis.
  std::span<T> slice(std::size_t i) {
    const std::size_t len = shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0];
    return std::span<T>(data_).subspan(i * len, len);
  }
  std::span<const T> slice(std::size_t i) const {
    const std::size_t len = shape_.empty() || shape_[0] == 0 ? 0 : data_.size() / shape_[0];
    return std::span<const T>(data_).subspan(i * len, len);
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(T value) { data_.assign(data_.size(), value); }

  bool operator==(const Tensor& other) const = default;

 private:
  void check_rank() const {
    if (shape_.size() > kMaxRank) {
      throw DimensionError("tensor rank " + std::to_string(shape_.size()) + " exceeds 4");
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
struct MeanVar {
  Tensor<T> mean;
  Tensor<T> var;
};

// C = alpha * op(A) * op(B) + beta * C with row-major operands, op(X) = X or X^T.
// op(A) is m x k, op(B) is k x n, C is m x n.
template <typename T>
void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          std::span<const T> a, std::span<const T> b, T beta, std::span<T> c);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> randn(const Shape& shape, Rng& rng, T mean, T stddev);

// Mean and population variance (divisor = extent) along `axis`; the axis is removed.
template <typename T>
MeanVar<T> reduce_stats(const Tensor<T>& t, std::size_t axis);

template <typename T>
double dot(std::span<const T> a, std::span<const T> b);

template <typename T>
double squared_norm(std::span<const T> a);

template <typename T>
double max_abs(std::span<const T> a);

template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return Tensor<To>(t.shape(), std::move(out));
}

}  // namespace ncconv
