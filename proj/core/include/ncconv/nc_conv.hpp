#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ncconv/im2col.hpp"
#include "ncconv/rng.hpp"
#include "ncconv/tensor.hpp"

namespace ncconv {

enum class WeightInit {
  FanIn,  // N(0, 1/I): unit output variance for standardized patches
  He,     // N(0, 2/I)
};

double init_stddev(WeightInit init, std::size_t fan_in);

// Column statistics of one im2col matrix. denom = sigma + eps.
template <typename T>
struct PatchStats {
  Tensor<T> mu;
  Tensor<T> sigma;
  Tensor<T> denom;
};

template <typename T>
struct StandardizedColumns {
  Im2ColMatrix<T> xhat;
  PatchStats<T> stats;
};

// xhat[i,k] = (x[i,k] - mu_k) / (sigma_k + eps), with population sigma over the I rows.
template <typename T>
StandardizedColumns<T> standardize_columns(const Im2ColMatrix<T>& m, T eps);

// In-place kernel behind standardize_columns. cols is I x K; mu/sigma/denom have length K.
template <typename T>
void standardize_columns_inplace(std::span<T> cols, std::size_t rows, std::size_t cols_count,
                                 T eps, std::span<T> mu, std::span<T> sigma, std::span<T> denom);

// Turns dL/dxhat (I x K, in place) into dL/dx through the standardization, eps included.
// At sigma_k == 0 the sigma term is dropped: xhat_k is identically zero there and the
// symmetric derivative of sigma vanishes.
template <typename T>
void standardize_columns_backward_inplace(std::span<T> grad, std::span<const T> xhat,
                                          std::size_t rows, std::size_t cols_count,
                                          std::span<const T> sigma, std::span<const T> denom);

// Normalized convolution: weights O x I, per-output-channel affine after the GEMM.
// The cache holds what backward needs from the most recent forward.
template <typename T>
struct NcLayerState {
  Tensor<T> weights;
  Tensor<T> gamma;
  Tensor<T> beta;
  T epsilon = T(1e-5);

  struct Cache {
    bool valid = false;
    ConvGeometry geometry;
    std::size_t batch = 0;
    std::vector<Tensor<T>> xhat;        // I x K per sample
    std::vector<PatchStats<T>> stats;   // per sample
    std::vector<Tensor<T>> pre_affine;  // O x K per sample
  } cache;

  // Warns when I == 1: every patch is constant, so the output collapses to beta.
  static NcLayerState create(const ConvGeometry& g, Rng& rng, WeightInit init = WeightInit::FanIn,
                             T epsilon = T(1e-5));
};

template <typename T>
struct NcGradients {
  Tensor<T> grad_x;
  Tensor<T> grad_weights;
  Tensor<T> grad_gamma;
  Tensor<T> grad_beta;
};

// y[n,o,k] = gamma_o * sum_i W[o,i] * xhat[n][i,k] + beta_o.
template <typename T>
Tensor<T> nc_forward(const Tensor<T>& x, NcLayerState<T>& state, const ConvGeometry& g,
                     bool keep_cache = true);

template <typename T>
NcGradients<T> nc_backward(const Tensor<T>& grad_y, const NcLayerState<T>& state,
                           const ConvGeometry& g);

// Standard bias-free convolution via im2col + GEMM.
template <typename T>
struct ConvLayerState {
  Tensor<T> weights;  // O x I

  struct Cache {
    bool valid = false;
    ConvGeometry geometry;
    std::size_t batch = 0;
    std::vector<Tensor<T>> cols;  // I x K per sample
  } cache;

  static ConvLayerState create(const ConvGeometry& g, Rng& rng, WeightInit init = WeightInit::He);
};

template <typename T>
struct ConvGradients {
  Tensor<T> grad_x;
  Tensor<T> grad_weights;
};

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, ConvLayerState<T>& state, const ConvGeometry& g,
                       bool keep_cache = true);

template <typename T>
ConvGradients<T> conv_backward(const Tensor<T>& grad_y, const ConvLayerState<T>& state,
                               const ConvGeometry& g);

// Direct nested-loop convolution, used as the correctness reference in benchmarks.
template <typename T>
Tensor<T> conv_naive(const Tensor<T>& x, const Tensor<T>& weights, const ConvGeometry& g);

}  // namespace ncconv
