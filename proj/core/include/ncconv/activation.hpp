#pragma once

#include <string>
#include <string_view>

#include "ncconv/tensor.hpp"

namespace ncconv {

enum class Activation { Identity, ReLU, ELU, SELU };

// Self-normalizing constants (Klambauer et al. fixed point for zero mean, unit variance).
inline constexpr double kSeluLambda = 1.0507009873554804934193349852946;
inline constexpr double kSeluAlpha = 1.6732632423543772848170429916717;
inline constexpr double kEluAlpha = 1.0;

Activation parse_activation(std::string_view name);
std::string to_string(Activation a);

double activate(Activation a, double x);
// Derivative from the pre-activation x; at x == 0 the left branch is used.
double activate_derivative(Activation a, double x);

template <typename T>
Tensor<T> activation_forward(const Tensor<T>& x, Activation a);

// grad_x = grad_y * f'(x), x being the cached pre-activation input.
template <typename T>
Tensor<T> activation_backward(const Tensor<T>& grad_y, const Tensor<T>& x, Activation a);

}  // namespace ncconv
