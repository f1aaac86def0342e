#include "ncconv/group_norm.hpp"

#include <cmath>

#include "ncconv/parallel.hpp"

namespace ncconv {

std::size_t default_group_count(std::size_t channels) {
  for (std::size_t g = 32; g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

template <typename T>
GroupNormState<T> GroupNormState<T>::create(std::size_t channels, std::size_t groups, T epsilon) {
  if (channels == 0 || groups == 0 || channels % groups != 0) {
    throw ConfigError("group norm: " + std::to_string(groups) + " groups do not divide " +
                      std::to_string(channels) + " channels");
  }
  GroupNormState s;
  s.groups = groups;
  s.gamma = Tensor<T>({channels}, T{1});
  s.beta = Tensor<T>({channels}, T{0});
  s.epsilon = epsilon;
  return s;
}

namespace {

template <typename T>
void check_shape(const Shape& shape, const GroupNormState<T>& s) {
  if (shape.size() != 4 || shape[1] != s.gamma.size()) {
    throw DimensionError("group norm: input " + to_string(shape) + " expected N x " +
                         std::to_string(s.gamma.size()) + " x H x W");
  }
  if (s.groups == 0 || shape[1] % s.groups != 0) {
    throw ConfigError("group norm: " + std::to_string(s.groups) + " groups do not divide " +
                      std::to_string(shape[1]) + " channels");
  }
}

}  // namespace

template <typename T>
Tensor<T> groupnorm_forward(const Tensor<T>& x, GroupNormState<T>& state, bool keep_cache) {
  check_shape(x.shape(), state);
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  const std::size_t per_group = channels / state.groups, group_len = per_group * plane;

  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(batch * state.groups);
  parallel_for(batch, [&](std::size_t n) {
    for (std::size_t grp = 0; grp < state.groups; ++grp) {
      const std::size_t offset = (n * channels + grp * per_group) * plane;
      double sum = 0.0;
      for (std::size_t i = 0; i < group_len; ++i) sum += x[offset + i];
      const double mean = sum / static_cast<double>(group_len);
      double sq = 0.0;
      for (std::size_t i = 0; i < group_len; ++i) {
        const double d = x[offset + i] - mean;
        sq += d * d;
      }
      const double var = sq / static_cast<double>(group_len);
      const double inv = 1.0 / std::sqrt(var + static_cast<double>(state.epsilon));
      inv_std[n * state.groups + grp] = static_cast<T>(inv);
      for (std::size_t i = 0; i < group_len; ++i)
        xhat[offset + i] = static_cast<T>((x[offset + i] - mean) * inv);
    }
  });

  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t offset = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i)
        y[offset + i] = state.gamma[c] * xhat[offset + i] + state.beta[c];
    }

  if (keep_cache) {
    state.cache.valid = true;
    state.cache.input_shape = x.shape();
    state.cache.xhat = std::move(xhat);
    state.cache.inv_std = std::move(inv_std);
  } else {
    state.cache.valid = false;
  }
  return y;
}

template <typename T>
GroupNormGradients<T> groupnorm_backward(const Tensor<T>& grad_y, const GroupNormState<T>& state) {
  const auto& cache = state.cache;
  if (!cache.valid) throw StateError("groupnorm_backward: no cached forward pass");
  if (grad_y.shape() != cache.input_shape) {
    throw StateError("groupnorm_backward: gradient " + to_string(grad_y.shape()) +
                     " does not match cached input " + to_string(cache.input_shape));
  }
  const std::size_t batch = grad_y.dim(0), channels = grad_y.dim(1),
                    plane = grad_y.dim(2) * grad_y.dim(3);
  const std::size_t per_group = channels / state.groups, group_len = per_group * plane;
  const auto& xhat = cache.xhat;

  GroupNormGradients<T> g{Tensor<T>(grad_y.shape()), Tensor<T>({channels}),
                          Tensor<T>({channels})};
  for (std::size_t c = 0; c < channels; ++c) {
    double sg = 0.0, sb = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t offset = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sb += grad_y[offset + i];
        sg += static_cast<double>(grad_y[offset + i]) * xhat[offset + i];
      }
    }
    g.grad_gamma[c] = static_cast<T>(sg);
    g.grad_beta[c] = static_cast<T>(sb);
  }

  parallel_for(batch, [&](std::size_t n) {
    for (std::size_t grp = 0; grp < state.groups; ++grp) {
      const std::size_t offset = (n * channels + grp * per_group) * plane;
      double mean_gx = 0.0, mean_gx_xhat = 0.0;
      for (std::size_t i = 0; i < group_len; ++i) {
        const std::size_t c = grp * per_group + i / plane;
        const double gx = static_cast<double>(state.gamma[c]) * grad_y[offset + i];
        mean_gx += gx;
        mean_gx_xhat += gx * xhat[offset + i];
      }
      mean_gx /= static_cast<double>(group_len);
      mean_gx_xhat /= static_cast<double>(group_len);
      const double inv = cache.inv_std[n * state.groups + grp];
      for (std::size_t i = 0; i < group_len; ++i) {
        const std::size_t c = grp * per_group + i / plane;
        const double gx = static_cast<double>(state.gamma[c]) * grad_y[offset + i];
        g.grad_x[offset + i] =
            static_cast<T>(inv * (gx - mean_gx - xhat[offset + i] * mean_gx_xhat));
      }
    }
  });
  return g;
}

template struct GroupNormState<float>;
template struct GroupNormState<double>;
template Tensor<float> groupnorm_forward<float>(const Tensor<float>&, GroupNormState<float>&, bool);
template Tensor<double> groupnorm_forward<double>(const Tensor<double>&, GroupNormState<double>&,
                                                  bool);
template GroupNormGradients<float> groupnorm_backward<float>(const Tensor<float>&,
                                                             const GroupNormState<float>&);
template GroupNormGradients<double> groupnorm_backward<double>(const Tensor<double>&,
                                                               const GroupNormState<double>&);

}  // namespace ncconv
