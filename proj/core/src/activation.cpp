#include "ncconv/activation.hpp"

#include <cmath>

namespace ncconv {

Activation parse_activation(std::string_view name) {
  if (name == "identity" || name == "none") return Activation::Identity;
  if (name == "relu") return Activation::ReLU;
  if (name == "elu") return Activation::ELU;
  if (name == "selu") return Activation::SELU;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity:
      return "identity";
    case Activation::ReLU:
      return "relu";
    case Activation::ELU:
      return "elu";
    case Activation::SELU:
      return "selu";
  }
  return "identity";
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Identity:
      return x;
    case Activation::ReLU:
      return x > 0.0 ? x : 0.0;
    case Activation::ELU:
      return x > 0.0 ? x : kEluAlpha * std::expm1(x);
    case Activation::SELU:
      return kSeluLambda * (x > 0.0 ? x : kSeluAlpha * std::expm1(x));
  }
  return x;
}

double activate_derivative(Activation a, double x) {
  switch (a) {
    case Activation::Identity:
      return 1.0;
    case Activation::ReLU:
      return x > 0.0 ? 1.0 : 0.0;
    case Activation::ELU:
      return x > 0.0 ? 1.0 : kEluAlpha * std::exp(x);
    case Activation::SELU:
      return kSeluLambda * (x > 0.0 ? 1.0 : kSeluAlpha * std::exp(x));
  }
  return 1.0;
}

template <typename T>
Tensor<T> activation_forward(const Tensor<T>& x, Activation a) {
  Tensor<T> y(x.shape());
  if (a == Activation::ReLU) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<T>(activate(a, x[i]));
  }
  return y;
}

template <typename T>
Tensor<T> activation_backward(const Tensor<T>& grad_y, const Tensor<T>& x, Activation a) {
  if (grad_y.shape() != x.shape()) {
    throw DimensionError("activation_backward: gradient " + to_string(grad_y.shape()) +
                         " vs input " + to_string(x.shape()));
  }
  Tensor<T> g(x.shape());
  if (a == Activation::ReLU) {
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > T{0} ? grad_y[i] : T{0};
  } else {
    for (std::size_t i = 0; i < x.size(); ++i)
      g[i] = static_cast<T>(grad_y[i] * activate_derivative(a, x[i]));
  }
  return g;
}

template Tensor<float> activation_forward<float>(const Tensor<float>&, Activation);
template Tensor<double> activation_forward<double>(const Tensor<double>&, Activation);
template Tensor<float> activation_backward<float>(const Tensor<float>&, const Tensor<float>&,
                                                  Activation);
template Tensor<double> activation_backward<double>(const Tensor<double>&, const Tensor<double>&,
                                                    Activation);

}  // namespace ncconv
