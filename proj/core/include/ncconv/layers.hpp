#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ncconv/activation.hpp"
#include "ncconv/group_norm.hpp"
#include "ncconv/nc_conv.hpp"
#include "ncconv/tensor.hpp"

namespace ncconv {

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

// A differentiable stage. forward(training=true) caches what backward needs;
// backward overwrites parameter gradients and returns the gradient w.r.t. the input.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_y) = 0;

  virtual void collect_parameters(const std::string& /*prefix*/, std::vector<ParamRef<T>>& /*out*/) {}
  // Depth-first walk over this layer and any nested layers.
  virtual void visit(const std::function<void(const Layer&)>& fn) const { fn(*this); }

  // Set by convolution layers after backward: ||dL/d input||_2 over the batch.
  virtual std::optional<double> input_grad_norm() const { return std::nullopt; }
};

template <typename T>
class NcConvLayer final : public Layer<T> {
 public:
  NcConvLayer(const ConvGeometry& g, Rng& rng, WeightInit init, T epsilon);

  std::string kind() const override { return "nc_conv"; }
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& grad_y) override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  std::optional<double> input_grad_norm() const override { return input_grad_norm_; }

  const ConvGeometry& geometry() const { return geometry_; }
  NcLayerState<T>& state() { return state_; }

 private:
  ConvGeometry geometry_;
  NcLayerState<T> state_;
  Tensor<T> grad_weights_, grad_gamma_, grad_beta_;
  std::optional<double> input_grad_norm_;
};

template <typename T>
class ConvLayer final : public Layer<T> {
 public:
  ConvLayer(const ConvGeometry& g, Rng& rng, WeightInit init);

  std::string kind() const override { return "conv"; }
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& grad_y) override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  std::optional<double> input_grad_norm() const override { return input_grad_norm_; }

  const ConvGeometry& geometry() const { return geometry_; }
  ConvLayerState<T>& state() { return state_; }

 private:
  ConvGeometry geometry_;
  ConvLayerState<T> state_;
  Tensor<T> grad_weights_;
  std::optional<double> input_grad_norm_;
};

template <typename T>
class GroupNormLayer final : public Layer<T> {
 public:
  GroupNormLayer(std::size_t channels, std::size_t groups, T epsilon);

  std::string kind() const override { return "group_norm"; }
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& grad_y) override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) override;

  std::size_t groups() const { return state_.groups; }

 private:
  GroupNormState<T> state_;
  Tensor<T> grad_gamma_, grad_beta_;
};

template <typename T>
class ActivationLayer final : public Layer<T> {
 public:
  explicit ActivationLayer(Activation a) : activation_(a) {}

  std::string kind() const override { return to_string(activation_); }
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& grad_y) override;

 private:
  Activation activation_;
  std::optional<Tensor<T>> input_;
};

// Non-overlapping size x size average pooling; trailing rows/columns that do not fill a
// window are dropped.
template <typename T>
class AvgPoolLayer final : public Layer<T> {
 public:
  explicit AvgPoolLayer(std::size_t size) : size_(size) {}

  std::string kind() const override { return "avg_pool"; }
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& grad_y) override;

 private:
  std::size_t size_;
  std::optional<Shape> input_shape_;
};

// N x C x H x W -> N x C.
template <typename T>
class GlobalAvgPoolLayer final : public Layer<T> {
 public:
  std::string kind() const override { return "global_avg_pool"; }
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& grad_y) override;

 private:
  std::optional<Shape> input_shape_;
};

// Flattens everything after the batch axis, then y = x W^T + b.
template <typename T>
class LinearLayer final : public Layer<T> {
 public:
  LinearLayer(std::size_t in_features, std::size_t out_features, Rng& rng);

  std::string kind() const override { return "linear"; }
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& grad_y) override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) override;

  Tensor<T>& weights() { return weights_; }
  Tensor<T>& bias() { return bias_; }

 private:
  Tensor<T> weights_, bias_;
  Tensor<T> grad_weights_, grad_bias_;
  std::optional<Tensor<T>> input_;
  Shape input_shape_;
};

// out = act(main(x) + shortcut(x)); an empty shortcut is the identity.
template <typename T>
class ResidualLayer final : public Layer<T> {
 public:
  ResidualLayer(std::vector<std::unique_ptr<Layer<T>>> main,
                std::vector<std::unique_ptr<Layer<T>>> shortcut, Activation activation);

  std::string kind() const override { return "residual"; }
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& grad_y) override;
  void collect_parameters(const std::string& prefix, std::vector<ParamRef<T>>& out) override;
  void visit(const std::function<void(const Layer<T>&)>& fn) const override;

 private:
  std::vector<std::unique_ptr<Layer<T>>> main_, shortcut_;
  ActivationLayer<T> activation_;
};

}  // namespace ncconv
