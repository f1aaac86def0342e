#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "ncconv/layers.hpp"
#include "ncconv/model_spec.hpp"

namespace ncconv {

template <typename T>
class Model {
 public:
  Model(ModelSpec spec, std::vector<std::unique_ptr<Layer<T>>> layers, Shape output_shape);

  // x is N x input_shape(); returns N x output_shape().
  Tensor<T> forward(const Tensor<T>& x, bool training = true);
  // Fills every parameter gradient; returns dL/dx.
  Tensor<T> backward(const Tensor<T>& grad_output);

  std::vector<ParamRef<T>> parameters();
  std::size_t parameter_count();

  const ModelSpec& spec() const { return spec_; }
  const Shape& input_shape() const { return spec_.input; }
  const Shape& output_shape() const { return output_shape_; }
  std::size_t layer_count() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

  void visit(const std::function<void(const Layer<T>&)>& fn) const;

 private:
  ModelSpec spec_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  Shape output_shape_;
};

// Validates shapes layer by layer (errors name the offending layer index) and
// initializes parameters from rng. An empty spec is the identity map.
template <typename T>
Model<T> build_model(const ModelSpec& spec, Rng& rng);

}  // namespace ncconv
