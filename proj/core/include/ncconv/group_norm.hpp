#pragma once

#include <cstddef>
#include <vector>

#include "ncconv/tensor.hpp"

namespace ncconv {

// Per-sample normalization over groups of C/G channels, then per-channel affine.
// G = 1 is LayerNorm over (C, H, W); G = C is InstanceNorm.
template <typename T>
struct GroupNormState {
  std::size_t groups = 1;
  Tensor<T> gamma;
  Tensor<T> beta;
  T epsilon = T(1e-5);

  struct Cache {
    bool valid = false;
    Shape input_shape;
    Tensor<T> xhat;
    std::vector<T> inv_std;  // N * G
  } cache;

  // Throws ConfigError unless groups divides channels.
  static GroupNormState create(std::size_t channels, std::size_t groups, T epsilon = T(1e-5));
};

template <typename T>
struct GroupNormGradients {
  Tensor<T> grad_x;
  Tensor<T> grad_gamma;
  Tensor<T> grad_beta;
};

template <typename T>
Tensor<T> groupnorm_forward(const Tensor<T>& x, GroupNormState<T>& state, bool keep_cache = true);

template <typename T>
GroupNormGradients<T> groupnorm_backward(const Tensor<T>& grad_y, const GroupNormState<T>& state);

// 32 when it divides `channels`, otherwise the largest divisor of `channels` below 32.
std::size_t default_group_count(std::size_t channels);

}  // namespace ncconv
