#pragma once

#include <span>

#include "ncconv/tensor.hpp"

namespace ncconv {

template <typename T>
struct LossResult {
  double loss = 0.0;   // mean over the batch
  Tensor<T> grad;      // d loss / d logits, same shape as logits
};

// Mean softmax cross-entropy over N x classes logits, stabilized by log-sum-exp.
// Throws ConfigError when a label is outside [0, classes).
template <typename T>
LossResult<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// Number of rows whose label is among the k largest logits (ties broken by index).
template <typename T>
std::size_t topk_correct(const Tensor<T>& logits, std::span<const int> labels, std::size_t k);

}  // namespace ncconv
