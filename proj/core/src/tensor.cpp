#include "ncconv/tensor.hpp"

#include <Eigen/Core>
#include <cmath>
#include <sstream>

#include "ncconv/rng.hpp"

namespace ncconv {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

}  // namespace

template <typename T>
void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          std::span<const T> a, std::span<const T> b, T beta, std::span<T> c) {
  if (a.size() < m * k || b.size() < k * n || c.size() < m * n) {
    throw DimensionError("gemm buffer too small for " + std::to_string(m) + "x" +
                         std::to_string(k) + " * " + std::to_string(k) + "x" +
                         std::to_string(n));
  }
  const auto rows_a = static_cast<Eigen::Index>(transpose_a ? k : m);
  const auto cols_a = static_cast<Eigen::Index>(transpose_a ? m : k);
  const auto rows_b = static_cast<Eigen::Index>(transpose_b ? n : k);
  const auto cols_b = static_cast<Eigen::Index>(transpose_b ? k : n);
  ConstMap<T> ma(a.data(), rows_a, cols_a);
  ConstMap<T> mb(b.data(), rows_b, cols_b);
  MutMap<T> mc(c.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));

  if (beta == T{0}) {
    mc.setZero();
  } else if (beta != T{1}) {
    mc *= beta;
  }
  if (m == 0 || n == 0 || k == 0) return;
  if (!transpose_a && !transpose_b) {
    mc.noalias() += alpha * ma * mb;
  } else if (transpose_a && !transpose_b) {
    mc.noalias() += alpha * ma.transpose() * mb;
  } else if (!transpose_a && transpose_b) {
    mc.noalias() += alpha * ma * mb.transpose();
  } else {
    mc.noalias() += alpha * ma.transpose() * mb.transpose();
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + to_string(a.shape()) + " @ " +
                         to_string(b.shape()));
  }
  Tensor<T> out({a.dim(0), b.dim(1)});
  gemm<T>(false, false, a.dim(0), b.dim(1), a.dim(1), T{1}, a.data(), b.data(), T{0}, out.data());
  return out;
}

template <typename T>
Tensor<T> randn(const Shape& shape, Rng& rng, T mean, T stddev) {
  if (stddev < T{0}) throw ConfigError("randn: negative standard deviation");
  Tensor<T> out(shape);
  for (auto& v : out.data()) v = static_cast<T>(rng.normal(mean, stddev));
  return out;
}

template <typename T>
MeanVar<T> reduce_stats(const Tensor<T>& t, std::size_t axis) {
  if (axis >= t.rank()) {
    throw DimensionError("reduce_stats: axis " + std::to_string(axis) + " invalid for shape " +
                         to_string(t.shape()));
  }
  const std::size_t extent = t.dim(axis);
  if (extent == 0) throw DimensionError("reduce_stats: empty axis " + std::to_string(axis));

  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= t.dim(i);
  for (std::size_t i = axis + 1; i < t.rank(); ++i) inner *= t.dim(i);

  Shape reduced;
  for (std::size_t i = 0; i < t.rank(); ++i)
    if (i != axis) reduced.push_back(t.dim(i));

  MeanVar<T> out{Tensor<T>(reduced), Tensor<T>(reduced)};
  const auto src = t.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      double sum = 0.0;
      for (std::size_t e = 0; e < extent; ++e) sum += src[(o * extent + e) * inner + in];
      const double mean = sum / static_cast<double>(extent);
      double sq = 0.0;
      for (std::size_t e = 0; e < extent; ++e) {
        const double d = src[(o * extent + e) * inner + in] - mean;
        sq += d * d;
      }
      out.mean[o * inner + in] = static_cast<T>(mean);
      out.var[o * inner + in] = static_cast<T>(sq / static_cast<double>(extent));
    }
  }
  return out;
}

template <typename T>
double dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

template <typename T>
double squared_norm(std::span<const T> a) {
  return dot<T>(a, a);
}

template <typename T>
double max_abs(std::span<const T> a) {
  double m = 0.0;
  for (auto v : a) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

#define NCCONV_INSTANTIATE(T)                                                                  \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, T,                 \
                        std::span<const T>, std::span<const T>, T, std::span<T>);             \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> randn<T>(const Shape&, Rng&, T, T);                                      \
  template MeanVar<T> reduce_stats<T>(const Tensor<T>&, std::size_t);                         \
  template double dot<T>(std::span<const T>, std::span<const T>);                             \
  template double squared_norm<T>(std::span<const T>);                                        \
  template double max_abs<T>(std::span<const T>);

NCCONV_INSTANTIATE(float)
NCCONV_INSTANTIATE(double)
#undef NCCONV_INSTANTIATE

}  // namespace ncconv
