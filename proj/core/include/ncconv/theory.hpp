#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ncconv/data.hpp"
#include "ncconv/model.hpp"
#include "ncconv/rng.hpp"
#include "ncconv/train.hpp"

namespace ncconv {

// One numerical check of a gradient-norm identity. pass <=> gap <= tolerance.
struct IdentityReport {
  std::string identity;
  double lhs = 0.0;
  double rhs = 0.0;
  double gap = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string instance;
  std::vector<std::pair<std::string, double>> extra;
};

// Centering step: xdot = x - mean(x) 1. grad_centered is dL/dxdot.
struct CenteringInstance {
  std::vector<double> x;
  std::vector<double> grad_centered;
  std::string tag;
};

// Scaling step: xhat = xdot / sigma(xdot) on a centered, non-constant xdot.
// grad_standardized is dL/dxhat.
struct ScalingInstance {
  std::vector<double> centered;
  std::vector<double> grad_standardized;
  std::string tag;
};

// ||dL/dx||^2 = ||dL/dxdot||^2 - (1/I) <1, dL/dxdot>^2. The left side is computed by
// multiplying with the explicit centering Jacobian.
IdentityReport verify_centering_identity(const CenteringInstance& inst, double tolerance = 1e-10);

// ||dL/dxdot||^2 = (1/sigma^2) (||g||^2 + (1/I^2) <xhat, g>^2 (<xhat, xhat> - 2I)), g = dL/dxhat,
// checked against the explicit Jacobian of xdot -> xhat. Extras report the gap of the same
// bracket with a 1/sigma prefactor, the reduction term -(1/I)<xhat, g>^2, and ||xhat||^2 vs I.
// Throws ConfigError when sigma < 1e-12.
IdentityReport verify_scaling_identity(const ScalingInstance& inst, double tolerance = 1e-10);

CenteringInstance random_centering_instance(std::size_t patch_size, Rng& rng);
// The column scale is log-uniform in [0.1, 10] so sigma is rarely close to 1.
ScalingInstance random_scaling_instance(std::size_t patch_size, Rng& rng);

struct IdentitySuite {
  std::vector<IdentityReport> centering;
  std::vector<IdentityReport> scaling;
  bool all_pass() const;
};

// `instances` of each identity, cycling through `patch_sizes`.
IdentitySuite run_identity_suite(std::size_t instances, const std::vector<std::size_t>& patch_sizes,
                                 std::uint64_t seed, double tolerance = 1e-10);

enum class PatchDistribution { Gaussian, Uniform, HeavyTailed };
std::string to_string(PatchDistribution d);

struct NormalityReport {
  std::size_t patch_size = 0;
  std::size_t samples = 0;
  std::string distribution;
  double mean = 0.0;
  double variance = 0.0;
  double excess_kurtosis = 0.0;
  double mean_bound = 0.0;    // 4 / sqrt(n)
  bool degenerate = false;    // I == 1: every standardized patch is zero
  bool bounds_checked = false;  // applies when I >= 27 and n >= 10^4
  bool within_bounds = false;   // |mean| < mean_bound and variance in [0.9, 1.1]
};

// Draws `samples` raw patches, standardizes each (eps as in the layer), and takes one
// dot product per patch with a freshly drawn weight vector ~ N(0, weight_scale^2 / I).
NormalityReport check_output_normality(std::size_t patch_size, std::size_t samples, Rng& rng,
                                       PatchDistribution dist, double weight_scale = 1.0,
                                       double epsilon = 1e-5);

struct TraceRow {
  std::string model;
  std::size_t step = 0;
  double loss = 0.0;
  // |L(theta_{t+1}; B_t) - L(theta_t; B_t)|: how far one SGD step moves the loss on its batch.
  double abs_loss_change = 0.0;
  std::size_t conv_index = 0;
  double input_grad_norm = 0.0;
};

// Trains both models side by side on identical batches for `steps` SGD steps and
// records per-step losses and ||dL/d input|| at every convolution layer. Observational.
template <typename T>
std::vector<TraceRow> measure_grad_norm_reduction(Model<T>& first, const std::string& first_tag,
                                                  Model<T>& second, const std::string& second_tag,
                                                  const Dataset& data, const TrainConfig& cfg,
                                                  std::size_t steps);

void write_trace_csv(const std::filesystem::path& file, const std::vector<TraceRow>& rows);

std::string identity_reports_json(const IdentitySuite& suite);
std::string normality_reports_json(const std::vector<NormalityReport>& reports);

}  // namespace ncconv
