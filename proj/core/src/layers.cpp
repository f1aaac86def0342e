#include "ncconv/layers.hpp"

#include <cmath>

namespace ncconv {

namespace {

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("residual join: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace

// --- NcConvLayer ---

template <typename T>
NcConvLayer<T>::NcConvLayer(const ConvGeometry& g, Rng& rng, WeightInit init, T epsilon)
    : geometry_(g), state_(NcLayerState<T>::create(g, rng, init, epsilon)) {
  grad_weights_ = Tensor<T>(state_.weights.shape());
  grad_gamma_ = Tensor<T>(state_.gamma.shape());
  grad_beta_ = Tensor<T>(state_.beta.shape());
}

template <typename T>
Tensor<T> NcConvLayer<T>::forward(const Tensor<T>& x, bool training) {
  return nc_forward(x, state_, geometry_, training);
}

template <typename T>
Tensor<T> NcConvLayer<T>::backward(const Tensor<T>& grad_y) {
  auto g = nc_backward(grad_y, state_, geometry_);
  grad_weights_ = std::move(g.grad_weights);
  grad_gamma_ = std::move(g.grad_gamma);
  grad_beta_ = std::move(g.grad_beta);
  input_grad_norm_ = std::sqrt(squared_norm<T>(g.grad_x.data()));
  return std::move(g.grad_x);
}

template <typename T>
void NcConvLayer<T>::collect_parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + "weight", &state_.weights, &grad_weights_});
  out.push_back({prefix + "gamma", &state_.gamma, &grad_gamma_});
  out.push_back({prefix + "beta", &state_.beta, &grad_beta_});
}

// --- ConvLayer ---

template <typename T>
ConvLayer<T>::ConvLayer(const ConvGeometry& g, Rng& rng, WeightInit init)
    : geometry_(g), state_(ConvLayerState<T>::create(g, rng, init)) {
  grad_weights_ = Tensor<T>(state_.weights.shape());
}

template <typename T>
Tensor<T> ConvLayer<T>::forward(const Tensor<T>& x, bool training) {
  return conv_forward(x, state_, geometry_, training);
}

template <typename T>
Tensor<T> ConvLayer<T>::backward(const Tensor<T>& grad_y) {
  auto g = conv_backward(grad_y, state_, geometry_);
  grad_weights_ = std::move(g.grad_weights);
  input_grad_norm_ = std::sqrt(squared_norm<T>(g.grad_x.data()));
  return std::move(g.grad_x);
}

template <typename T>
void ConvLayer<T>::collect_parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + "weight", &state_.weights, &grad_weights_});
}

// --- GroupNormLayer ---

template <typename T>
GroupNormLayer<T>::GroupNormLayer(std::size_t channels, std::size_t groups, T epsilon)
    : state_(GroupNormState<T>::create(channels, groups, epsilon)),
      grad_gamma_({channels}),
      grad_beta_({channels}) {}

template <typename T>
Tensor<T> GroupNormLayer<T>::forward(const Tensor<T>& x, bool training) {
  return groupnorm_forward(x, state_, training);
}

template <typename T>
Tensor<T> GroupNormLayer<T>::backward(const Tensor<T>& grad_y) {
  auto g = groupnorm_backward(grad_y, state_);
  grad_gamma_ = std::move(g.grad_gamma);
  grad_beta_ = std::move(g.grad_beta);
  return std::move(g.grad_x);
}

template <typename T>
void GroupNormLayer<T>::collect_parameters(const std::string& prefix,
                                           std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + "gamma", &state_.gamma, &grad_gamma_});
  out.push_back({prefix + "beta", &state_.beta, &grad_beta_});
}

// --- ActivationLayer ---

template <typename T>
Tensor<T> ActivationLayer<T>::forward(const Tensor<T>& x, bool training) {
  if (training) {
    input_ = x;
  } else {
    input_.reset();
  }
  return activation_forward(x, activation_);
}

template <typename T>
Tensor<T> ActivationLayer<T>::backward(const Tensor<T>& grad_y) {
  if (!input_) throw StateError(kind() + " backward: no cached forward pass");
  return activation_backward(grad_y, *input_, activation_);
}

// --- AvgPoolLayer ---

template <typename T>
Tensor<T> AvgPoolLayer<T>::forward(const Tensor<T>& x, bool training) {
  if (x.rank() != 4 || x.dim(2) < size_ || x.dim(3) < size_) {
    throw DimensionError("avg_pool: input " + to_string(x.shape()) + " too small for window " +
                         std::to_string(size_));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), oh = x.dim(2) / size_, ow = x.dim(3) / size_;
  Tensor<T> y({n, c, oh, ow});
  const T scale = T{1} / static_cast<T>(size_ * size_);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          T acc{0};
          for (std::size_t di = 0; di < size_; ++di)
            for (std::size_t dj = 0; dj < size_; ++dj) acc += x.at(b, ch, i * size_ + di, j * size_ + dj);
          y.at(b, ch, i, j) = acc * scale;
        }
  if (training) {
    input_shape_ = x.shape();
  } else {
    input_shape_.reset();
  }
  return y;
}

template <typename T>
Tensor<T> AvgPoolLayer<T>::backward(const Tensor<T>& grad_y) {
  if (!input_shape_) throw StateError("avg_pool backward: no cached forward pass");
  Tensor<T> g(*input_shape_);
  const T scale = T{1} / static_cast<T>(size_ * size_);
  for (std::size_t b = 0; b < grad_y.dim(0); ++b)
    for (std::size_t ch = 0; ch < grad_y.dim(1); ++ch)
      for (std::size_t i = 0; i < grad_y.dim(2); ++i)
        for (std::size_t j = 0; j < grad_y.dim(3); ++j) {
          const T v = grad_y.at(b, ch, i, j) * scale;
          for (std::size_t di = 0; di < size_; ++di)
            for (std::size_t dj = 0; dj < size_; ++dj) g.at(b, ch, i * size_ + di, j * size_ + dj) = v;
        }
  return g;
}

// --- GlobalAvgPoolLayer ---

template <typename T>
Tensor<T> GlobalAvgPoolLayer<T>::forward(const Tensor<T>& x, bool training) {
  if (x.rank() != 4) throw DimensionError("global_avg_pool: expected rank 4, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> y({n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < plane; ++p) acc += x[i * plane + p];
    y[i] = static_cast<T>(acc / static_cast<double>(plane));
  }
  if (training) {
    input_shape_ = x.shape();
  } else {
    input_shape_.reset();
  }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPoolLayer<T>::backward(const Tensor<T>& grad_y) {
  if (!input_shape_) throw StateError("global_avg_pool backward: no cached forward pass");
  Tensor<T> g(*input_shape_);
  const std::size_t plane = (*input_shape_)[2] * (*input_shape_)[3];
  const T scale = T{1} / static_cast<T>(plane);
  for (std::size_t i = 0; i < grad_y.size(); ++i)
    for (std::size_t p = 0; p < plane; ++p) g[i * plane + p] = grad_y[i] * scale;
  return g;
}

// --- LinearLayer ---

template <typename T>
LinearLayer<T>::LinearLayer(std::size_t in_features, std::size_t out_features, Rng& rng)
    : weights_(randn<T>({out_features, in_features}, rng, T{0},
                        static_cast<T>(1.0 / std::sqrt(static_cast<double>(in_features))))),
      bias_({out_features}),
      grad_weights_({out_features, in_features}),
      grad_bias_({out_features}) {}

template <typename T>
Tensor<T> LinearLayer<T>::forward(const Tensor<T>& x, bool training) {
  const std::size_t n = x.rank() == 0 ? 1 : x.dim(0);
  const std::size_t features = n == 0 ? 0 : x.size() / n;
  if (features != weights_.dim(1)) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " has " +
                         std::to_string(features) + " features, expected " +
                         std::to_string(weights_.dim(1)));
  }
  const std::size_t out_f = weights_.dim(0);
  Tensor<T> y({n, out_f});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < out_f; ++o) y.at(b, o) = bias_[o];
  gemm<T>(false, true, n, out_f, features, T{1}, x.data(), weights_.data(), T{1}, y.data());
  if (training) {
    input_ = x;
    input_shape_ = x.shape();
  } else {
    input_.reset();
  }
  return y;
}

template <typename T>
Tensor<T> LinearLayer<T>::backward(const Tensor<T>& grad_y) {
  if (!input_) throw StateError("linear backward: no cached forward pass");
  const std::size_t n = grad_y.dim(0), out_f = weights_.dim(0), features = weights_.dim(1);
  gemm<T>(true, false, out_f, features, n, T{1}, grad_y.data(), input_->data(), T{0},
          grad_weights_.data());
  for (std::size_t o = 0; o < out_f; ++o) {
    double s = 0.0;
    for (std::size_t b = 0; b < n; ++b) s += grad_y.at(b, o);
    grad_bias_[o] = static_cast<T>(s);
  }
  Tensor<T> gx(input_shape_);
  gemm<T>(false, false, n, features, out_f, T{1}, grad_y.data(), weights_.data(), T{0}, gx.data());
  return gx;
}

template <typename T>
void LinearLayer<T>::collect_parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) {
  out.push_back({prefix + "weight", &weights_, &grad_weights_});
  out.push_back({prefix + "bias", &bias_, &grad_bias_});
}

// --- ResidualLayer ---

template <typename T>
ResidualLayer<T>::ResidualLayer(std::vector<std::unique_ptr<Layer<T>>> main,
                                std::vector<std::unique_ptr<Layer<T>>> shortcut,
                                Activation activation)
    : main_(std::move(main)), shortcut_(std::move(shortcut)), activation_(activation) {}

template <typename T>
Tensor<T> ResidualLayer<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> a = x;
  for (auto& l : main_) a = l->forward(a, training);
  Tensor<T> s = x;
  for (auto& l : shortcut_) s = l->forward(s, training);
  return activation_.forward(add(a, s), training);
}

template <typename T>
Tensor<T> ResidualLayer<T>::backward(const Tensor<T>& grad_y) {
  const Tensor<T> g = activation_.backward(grad_y);
  Tensor<T> gm = g;
  for (auto it = main_.rbegin(); it != main_.rend(); ++it) gm = (*it)->backward(gm);
  Tensor<T> gs = g;
  for (auto it = shortcut_.rbegin(); it != shortcut_.rend(); ++it) gs = (*it)->backward(gs);
  return add(gm, gs);
}

template <typename T>
void ResidualLayer<T>::collect_parameters(const std::string& prefix,
                                          std::vector<ParamRef<T>>& out) {
  for (std::size_t i = 0; i < main_.size(); ++i)
    main_[i]->collect_parameters(prefix + "main" + std::to_string(i) + ".", out);
  for (std::size_t i = 0; i < shortcut_.size(); ++i)
    shortcut_[i]->collect_parameters(prefix + "shortcut" + std::to_string(i) + ".", out);
}

template <typename T>
void ResidualLayer<T>::visit(const std::function<void(const Layer<T>&)>& fn) const {
  fn(*this);
  for (const auto& l : main_) l->visit(fn);
  for (const auto& l : shortcut_) l->visit(fn);
}

#define NCCONV_INSTANTIATE(T)              \
  template class NcConvLayer<T>;           \
  template class ConvLayer<T>;             \
  template class GroupNormLayer<T>;        \
  template class ActivationLayer<T>;       \
  template class AvgPoolLayer<T>;          \
  template class GlobalAvgPoolLayer<T>;    \
  template class LinearLayer<T>;           \
  template class ResidualLayer<T>;

NCCONV_INSTANTIATE(float)
NCCONV_INSTANTIATE(double)
#undef NCCONV_INSTANTIATE

}  // namespace ncconv
