#include "ncconv/nc_conv.hpp"

#include <cmath>
#include <vector>

#include "ncconv/log.hpp"
#include "ncconv/parallel.hpp"

namespace ncconv {

double init_stddev(WeightInit init, std::size_t fan_in) {
  const double f = static_cast<double>(fan_in);
  switch (init) {
    case WeightInit::FanIn:
      return 1.0 / std::sqrt(f);
    case WeightInit::He:
      return std::sqrt(2.0 / f);
  }
  return 1.0 / std::sqrt(f);
}

template <typename T>
void standardize_columns_inplace(std::span<T> cols, std::size_t rows, std::size_t cols_count,
                                 T eps, std::span<T> mu, std::span<T> sigma, std::span<T> denom) {
  std::vector<double> acc(cols_count, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = cols.data() + i * cols_count;
    for (std::size_t k = 0; k < cols_count; ++k) acc[k] += row[k];
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (std::size_t k = 0; k < cols_count; ++k) {
    mu[k] = static_cast<T>(acc[k] * inv_rows);
    acc[k] = 0.0;
  }
  for (std::size_t i = 0; i < rows; ++i) {
    const T* row = cols.data() + i * cols_count;
    for (std::size_t k = 0; k < cols_count; ++k) {
      const double d = static_cast<double>(row[k]) - mu[k];
      acc[k] += d * d;
    }
  }
  for (std::size_t k = 0; k < cols_count; ++k) {
    sigma[k] = static_cast<T>(std::sqrt(acc[k] * inv_rows));
    denom[k] = sigma[k] + eps;
  }
  for (std::size_t i = 0; i < rows; ++i) {
    T* row = cols.data() + i * cols_count;
    for (std::size_t k = 0; k < cols_count; ++k) row[k] = (row[k] - mu[k]) / denom[k];
  }
}

template <typename T>
void standardize_columns_backward_inplace(std::span<T> grad, std::span<const T> xhat,
                                          std::size_t rows, std::size_t cols_count,
                                          std::span<const T> sigma, std::span<const T> denom) {
  // dL/dx_j = (g_j - mean(g) - xhat_j * <g, xhat> * denom / (I * sigma)) / denom
  std::vector<double> sum_g(cols_count, 0.0), dot_gx(cols_count, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const T* g = grad.data() + i * cols_count;
    const T* xh = xhat.data() + i * cols_count;
    for (std::size_t k = 0; k < cols_count; ++k) {
      sum_g[k] += g[k];
      dot_gx[k] += static_cast<double>(g[k]) * xh[k];
    }
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  std::vector<T> mean_g(cols_count), coef(cols_count), inv_denom(cols_count);
  for (std::size_t k = 0; k < cols_count; ++k) {
    mean_g[k] = static_cast<T>(sum_g[k] * inv_rows);
    coef[k] = sigma[k] > T{0}
                  ? static_cast<T>(dot_gx[k] * inv_rows * static_cast<double>(denom[k]) / sigma[k])
                  : T{0};
    inv_denom[k] = T{1} / denom[k];
  }
  for (std::size_t i = 0; i < rows; ++i) {
    T* g = grad.data() + i * cols_count;
    const T* xh = xhat.data() + i * cols_count;
    for (std::size_t k = 0; k < cols_count; ++k) {
      g[k] = (g[k] - mean_g[k] - xh[k] * coef[k]) * inv_denom[k];
    }
  }
}

template <typename T>
StandardizedColumns<T> standardize_columns(const Im2ColMatrix<T>& m, T eps) {
  if (m.data.rank() != 2 || m.data.dim(0) == 0) {
    throw DimensionError("standardize_columns: expected a non-empty I x K matrix, got " +
                         to_string(m.data.shape()));
  }
  if (!(eps > T{0})) throw ConfigError("standardize_columns: epsilon must be positive");
  const std::size_t rows = m.data.dim(0), k = m.data.dim(1);
  StandardizedColumns<T> out{m, {Tensor<T>({k}), Tensor<T>({k}), Tensor<T>({k})}};
  standardize_columns_inplace<T>(out.xhat.data.data(), rows, k, eps, out.stats.mu.data(),
                                 out.stats.sigma.data(), out.stats.denom.data());
  return out;
}

namespace {

void check_input(const Shape& shape, const ConvGeometry& g, const char* who) {
  g.validate();
  if (shape.size() != 4 || shape[1] != g.in_channels || shape[2] != g.in_h ||
      shape[3] != g.in_w) {
    throw DimensionError(std::string(who) + ": input " + to_string(shape) +
                         " does not match geometry " + g.describe());
  }
}

template <typename T>
void check_weights(const Tensor<T>& w, const ConvGeometry& g, const char* who) {
  if (w.rank() != 2 || w.dim(0) != g.out_channels || w.dim(1) != g.patch_size()) {
    throw DimensionError(std::string(who) + ": weights " + to_string(w.shape()) +
                         " expected [" + std::to_string(g.out_channels) + "x" +
                         std::to_string(g.patch_size()) + "]");
  }
}

void check_grad(const Shape& shape, bool valid, const ConvGeometry& cached, std::size_t batch,
                const ConvGeometry& g, const char* who) {
  if (!valid) throw StateError(std::string(who) + ": no cached forward pass");
  if (!(cached == g)) {
    throw StateError(std::string(who) + ": cached forward used geometry " + cached.describe() +
                     ", backward got " + g.describe());
  }
  const Shape expect{batch, g.out_channels, g.out_h(), g.out_w()};
  if (shape != expect) {
    throw StateError(std::string(who) + ": output gradient " + to_string(shape) +
                     " does not match cached forward output " + to_string(expect));
  }
}

template <typename T>
Tensor<T> sum_in_order(const std::vector<Tensor<T>>& parts, const Shape& shape) {
  Tensor<T> total(shape);
  for (const auto& p : parts)
    for (std::size_t i = 0; i < total.size(); ++i) total[i] += p[i];
  return total;
}

}  // namespace

template <typename T>
NcLayerState<T> NcLayerState<T>::create(const ConvGeometry& g, Rng& rng, WeightInit init,
                                        T epsilon) {
  g.validate();
  if (g.patch_size() == 1) {
    warn("normalized convolution with patch size I=1 (" + g.describe() +
         "): every patch standardizes to zero and the output equals beta");
  }
  NcLayerState s;
  s.weights = randn<T>({g.out_channels, g.patch_size()}, rng, T{0},
                       static_cast<T>(init_stddev(init, g.patch_size())));
  s.gamma = Tensor<T>({g.out_channels}, T{1});
  s.beta = Tensor<T>({g.out_channels}, T{0});
  s.epsilon = epsilon;
  return s;
}

template <typename T>
Tensor<T> nc_forward(const Tensor<T>& x, NcLayerState<T>& state, const ConvGeometry& g,
                     bool keep_cache) {
  check_input(x.shape(), g, "nc_forward");
  check_weights(state.weights, g, "nc_forward");
  if (!(state.epsilon > T{0})) throw ConfigError("nc_forward: epsilon must be positive");
  const std::size_t batch = x.dim(0), rows = g.patch_size(), k = g.columns(),
                    out_c = g.out_channels;

  auto& cache = state.cache;
  cache.valid = false;
  cache.xhat.assign(keep_cache ? batch : 0, Tensor<T>());
  cache.stats.assign(keep_cache ? batch : 0, PatchStats<T>{});
  cache.pre_affine.assign(keep_cache ? batch : 0, Tensor<T>());

  Tensor<T> y({batch, out_c, g.out_h(), g.out_w()});
  parallel_for(batch, [&](std::size_t n) {
    Tensor<T> cols({rows, k});
    PatchStats<T> stats{Tensor<T>({k}), Tensor<T>({k}), Tensor<T>({k})};
    unfold_into<T>(x.slice(n), g, cols.data());
    standardize_columns_inplace<T>(cols.data(), rows, k, state.epsilon, stats.mu.data(),
                                   stats.sigma.data(), stats.denom.data());
    Tensor<T> z({out_c, k});
    gemm<T>(false, false, out_c, k, rows, T{1}, state.weights.data(), cols.data(), T{0},
            z.data());
    auto out = y.slice(n);
    for (std::size_t o = 0; o < out_c; ++o) {
      const T gm = state.gamma[o], bt = state.beta[o];
      for (std::size_t j = 0; j < k; ++j) out[o * k + j] = gm * z[o * k + j] + bt;
    }
    if (keep_cache) {
      cache.xhat[n] = std::move(cols);
      cache.stats[n] = std::move(stats);
      cache.pre_affine[n] = std::move(z);
    }
  });
  if (keep_cache) {
    cache.valid = true;
    cache.geometry = g;
    cache.batch = batch;
  }
  return y;
}

template <typename T>
NcGradients<T> nc_backward(const Tensor<T>& grad_y, const NcLayerState<T>& state,
                           const ConvGeometry& g) {
  const auto& cache = state.cache;
  check_grad(grad_y.shape(), cache.valid, cache.geometry, cache.batch, g, "nc_backward");
  const std::size_t batch = cache.batch, rows = g.patch_size(), k = g.columns(),
                    out_c = g.out_channels;

  NcGradients<T> grads;
  grads.grad_x = Tensor<T>({batch, g.in_channels, g.in_h, g.in_w});
  std::vector<Tensor<T>> part_w(batch), part_gamma(batch), part_beta(batch);

  parallel_for(batch, [&](std::size_t n) {
    const auto gy = grad_y.slice(n);
    const auto& z = cache.pre_affine[n];
    const auto& xhat = cache.xhat[n];
    Tensor<T> gz({out_c, k});
    Tensor<T> pg({out_c}), pb({out_c});
    for (std::size_t o = 0; o < out_c; ++o) {
      double sb = 0.0, sg = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const T v = gy[o * k + j];
        sb += v;
        sg += static_cast<double>(v) * z[o * k + j];
        gz[o * k + j] = state.gamma[o] * v;
      }
      pb[o] = static_cast<T>(sb);
      pg[o] = static_cast<T>(sg);
    }
    Tensor<T> pw({out_c, rows});
    gemm<T>(false, true, out_c, rows, k, T{1}, gz.data(), xhat.data(), T{0}, pw.data());
    Tensor<T> gcols({rows, k});
    gemm<T>(true, false, rows, k, out_c, T{1}, state.weights.data(), gz.data(), T{0},
            gcols.data());
    standardize_columns_backward_inplace<T>(gcols.data(), xhat.data(), rows, k,
                                            cache.stats[n].sigma.data(),
                                            cache.stats[n].denom.data());
    fold_into<T>(gcols.data(), g, grads.grad_x.slice(n));
    part_w[n] = std::move(pw);
    part_gamma[n] = std::move(pg);
    part_beta[n] = std::move(pb);
  });

  grads.grad_weights = sum_in_order(part_w, {out_c, rows});
  grads.grad_gamma = sum_in_order(part_gamma, {out_c});
  grads.grad_beta = sum_in_order(part_beta, {out_c});
  return grads;
}

template <typename T>
ConvLayerState<T> ConvLayerState<T>::create(const ConvGeometry& g, Rng& rng, WeightInit init) {
  g.validate();
  ConvLayerState s;
  s.weights = randn<T>({g.out_channels, g.patch_size()}, rng, T{0},
                       static_cast<T>(init_stddev(init, g.patch_size())));
  return s;
}

template <typename T>
Tensor<T> conv_forward(const Tensor<T>& x, ConvLayerState<T>& state, const ConvGeometry& g,
                       bool keep_cache) {
  check_input(x.shape(), g, "conv_forward");
  check_weights(state.weights, g, "conv_forward");
  const std::size_t batch = x.dim(0), rows = g.patch_size(), k = g.columns(),
                    out_c = g.out_channels;
  auto& cache = state.cache;
  cache.valid = false;
  cache.cols.assign(keep_cache ? batch : 0, Tensor<T>());

  Tensor<T> y({batch, out_c, g.out_h(), g.out_w()});
  parallel_for(batch, [&](std::size_t n) {
    Tensor<T> cols({rows, k});
    unfold_into<T>(x.slice(n), g, cols.data());
    gemm<T>(false, false, out_c, k, rows, T{1}, state.weights.data(), cols.data(), T{0},
            y.slice(n));
    if (keep_cache) cache.cols[n] = std::move(cols);
  });
  if (keep_cache) {
    cache.valid = true;
    cache.geometry = g;
    cache.batch = batch;
  }
  return y;
}

template <typename T>
ConvGradients<T> conv_backward(const Tensor<T>& grad_y, const ConvLayerState<T>& state,
                               const ConvGeometry& g) {
  const auto& cache = state.cache;
  check_grad(grad_y.shape(), cache.valid, cache.geometry, cache.batch, g, "conv_backward");
  const std::size_t batch = cache.batch, rows = g.patch_size(), k = g.columns(),
                    out_c = g.out_channels;
  ConvGradients<T> grads;
  grads.grad_x = Tensor<T>({batch, g.in_channels, g.in_h, g.in_w});
  std::vector<Tensor<T>> part_w(batch);
  parallel_for(batch, [&](std::size_t n) {
    const auto gy = grad_y.slice(n);
    Tensor<T> pw({out_c, rows});
    gemm<T>(false, true, out_c, rows, k, T{1}, gy, cache.cols[n].data(), T{0}, pw.data());
    Tensor<T> gcols({rows, k});
    gemm<T>(true, false, rows, k, out_c, T{1}, state.weights.data(), gy, T{0}, gcols.data());
    fold_into<T>(gcols.data(), g, grads.grad_x.slice(n));
    part_w[n] = std::move(pw);
  });
  grads.grad_weights = sum_in_order(part_w, {out_c, rows});
  return grads;
}

template <typename T>
Tensor<T> conv_naive(const Tensor<T>& x, const Tensor<T>& weights, const ConvGeometry& g) {
  check_input(x.shape(), g, "conv_naive");
  check_weights(weights, g, "conv_naive");
  const std::size_t oh = g.out_h(), ow = g.out_w();
  Tensor<T> y({x.dim(0), g.out_channels, oh, ow});
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = 0.0;
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ki = 0; ki < g.kernel_h; ++ki)
              for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride_h + ki) -
                                static_cast<std::ptrdiff_t>(g.pad_h);
                const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride_w + kj) -
                                static_cast<std::ptrdiff_t>(g.pad_w);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h) ||
                    ix >= static_cast<std::ptrdiff_t>(g.in_w))
                  continue;
                acc += static_cast<double>(weights.at(o, (c * g.kernel_h + ki) * g.kernel_w + kj)) *
                       x.at(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
          y.at(n, o, oy, ox) = static_cast<T>(acc);
        }
  return y;
}

#define NCCONV_INSTANTIATE(T)                                                                   \
  template void standardize_columns_inplace<T>(std::span<T>, std::size_t, std::size_t, T,      \
                                               std::span<T>, std::span<T>, std::span<T>);      \
  template void standardize_columns_backward_inplace<T>(std::span<T>, std::span<const T>,      \
                                                        std::size_t, std::size_t,              \
                                                        std::span<const T>, std::span<const T>); \
  template StandardizedColumns<T> standardize_columns<T>(const Im2ColMatrix<T>&, T);           \
  template struct NcLayerState<T>;                                                             \
  template struct ConvLayerState<T>;                                                           \
  template Tensor<T> nc_forward<T>(const Tensor<T>&, NcLayerState<T>&, const ConvGeometry&,    \
                                   bool);                                                      \
  template NcGradients<T> nc_backward<T>(const Tensor<T>&, const NcLayerState<T>&,            \
                                         const ConvGeometry&);                                 \
  template Tensor<T> conv_forward<T>(const Tensor<T>&, ConvLayerState<T>&, const ConvGeometry&, \
                                     bool);                                                    \
  template ConvGradients<T> conv_backward<T>(const Tensor<T>&, const ConvLayerState<T>&,      \
                                             const ConvGeometry&);                             \
  template Tensor<T> conv_naive<T>(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);

NCCONV_INSTANTIATE(float)
NCCONV_INSTANTIATE(double)
#undef NCCONV_INSTANTIATE

}  // namespace ncconv
