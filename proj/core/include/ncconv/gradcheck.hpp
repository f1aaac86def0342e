#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ncconv {

// Finite-difference checks of every analytic backward pass, in 64-bit.
struct GradcheckOptions {
  std::size_t configs = 24;   // randomized geometries per suite
  double step = 1e-5;         // central-difference step
  double tolerance = 1e-6;    // on relative_gradient_error
  double activation_tolerance = 1e-8;
  std::uint64_t seed = 20240601;
  // Test hook: corrupts one element of each normalized-conv weight gradient before the
  // comparison. Exists only so callers can confirm that the suite detects a wrong gradient.
  bool perturb_analytic = false;
};

struct GradcheckCase {
  std::string suite;
  std::string description;
  std::vector<std::pair<std::string, double>> errors;  // per gradient tensor
  double max_error = 0.0;
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  bool all_pass() const;
  std::size_t failures() const;
};

// max_i |a_i - n_i| / max(||a||_inf, ||n||_inf, 1e-8): the worst entry error relative to the
// gradient's own scale, so isolated near-zero entries do not dominate.
double relative_gradient_error(std::span<const double> analytic, std::span<const double> numeric);

// Central differences of f with respect to every entry of x (restored afterwards).
std::vector<double> numerical_gradient(const std::function<double()>& f, std::span<double> x,
                                       double step);

GradcheckReport gradcheck_nc_conv(const GradcheckOptions& opts);
GradcheckReport gradcheck_conv(const GradcheckOptions& opts);
GradcheckReport gradcheck_groupnorm(const GradcheckOptions& opts);
GradcheckReport gradcheck_activations(const GradcheckOptions& opts);
// NC conv -> ReLU -> linear under cross-entropy, w.r.t. every parameter.
GradcheckReport gradcheck_model(const GradcheckOptions& opts);

// All suites above, concatenated.
GradcheckReport run_gradcheck(const GradcheckOptions& opts);

}  // namespace ncconv
