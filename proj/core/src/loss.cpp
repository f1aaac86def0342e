#include "ncconv/loss.hpp"

#include <cmath>

namespace ncconv {

namespace {

template <typename T>
void check(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= logits.dim(1)) {
      throw ConfigError("label " + std::to_string(l) + " out of range for " +
                        std::to_string(logits.dim(1)) + " classes");
    }
  }
}

}  // namespace

template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  check(logits, labels);
  const std::size_t n = logits.dim(0), classes = logits.dim(1);
  LossResult<T> r{0.0, Tensor<T>(logits.shape())};
  if (n == 0) return r;
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, static_cast<double>(logits.at(b, c)));
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(logits.at(b, c) - mx);
    const double lse = mx + std::log(sum);
    total += lse - logits.at(b, static_cast<std::size_t>(labels[b]));
    for (std::size_t c = 0; c < classes; ++c) {
      const double p = std::exp(logits.at(b, c) - lse);
      const double target = static_cast<std::size_t>(labels[b]) == c ? 1.0 : 0.0;
      r.grad.at(b, c) = static_cast<T>((p - target) * inv_n);
    }
  }
  r.loss = total * inv_n;
  return r;
}

template <typename T>
std::size_t topk_correct(const Tensor<T>& logits, std::span<const int> labels, std::size_t k) {
  check(logits, labels);
  std::size_t correct = 0;
  for (std::size_t b = 0; b < logits.dim(0); ++b) {
    const auto label = static_cast<std::size_t>(labels[b]);
    const T target = logits.at(b, label);
    std::size_t ahead = 0;
    for (std::size_t c = 0; c < logits.dim(1); ++c) {
      const T v = logits.at(b, c);
      if (v > target || (v == target && c < label)) ++ahead;
    }
    if (ahead < k) ++correct;
  }
  return correct;
}

template LossResult<float> cross_entropy<float>(const Tensor<float>&, std::span<const int>);
template LossResult<double> cross_entropy<double>(const Tensor<double>&, std::span<const int>);
template std::size_t topk_correct<float>(const Tensor<float>&, std::span<const int>, std::size_t);
template std::size_t topk_correct<double>(const Tensor<double>&, std::span<const int>, std::size_t);

}  // namespace ncconv
