#include "ncconv/theory.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "ncconv/loss.hpp"
#include "ncconv/metrics.hpp"

namespace ncconv {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double relative_gap(double lhs, double rhs, double scale) {
  const double denom = std::max({std::abs(lhs), std::abs(rhs), scale, 1e-300});
  return std::abs(lhs - rhs) / denom;
}

std::vector<double> apply_transpose(const std::vector<double>& jac, std::size_t n,
                                    const std::vector<double>& g) {
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += jac[i * n + j] * g[i];
  return out;
}

std::string describe_instance(const std::string& tag, std::size_t n) {
  return tag + " I=" + std::to_string(n);
}

}  // namespace

IdentityReport verify_centering_identity(const CenteringInstance& inst, double tolerance) {
  const std::size_t n = inst.x.size();
  if (n == 0 || inst.grad_centered.size() != n) {
    throw DimensionError("centering instance: column and gradient lengths differ or are zero");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  // d xdot_i / d x_j = delta_ij - 1/I
  std::vector<double> jac(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) jac[i * n + j] = (i == j ? 1.0 : 0.0) - inv_n;
  const auto grad_x = apply_transpose(jac, n, inst.grad_centered);

  const auto& g = inst.grad_centered;
  double sum_g = 0.0;
  for (double v : g) sum_g += v;
  IdentityReport r;
  r.identity = "centering";
  r.lhs = dot(grad_x, grad_x);
  r.rhs = dot(g, g) - inv_n * sum_g * sum_g;
  r.gap = relative_gap(r.lhs, r.rhs, dot(g, g));
  r.tolerance = tolerance;
  r.pass = r.gap <= tolerance;
  r.instance = describe_instance(inst.tag, n);
  r.extra = {{"norm_reduction_nonnegative", r.lhs <= dot(g, g) * (1.0 + 1e-12) ? 1.0 : 0.0}};
  return r;
}

IdentityReport verify_scaling_identity(const ScalingInstance& inst, double tolerance) {
  const std::size_t n = inst.centered.size();
  if (n == 0 || inst.grad_standardized.size() != n) {
    throw DimensionError("scaling instance: column and gradient lengths differ or are zero");
  }
  const double dn = static_cast<double>(n);
  const double sigma = std::sqrt(dot(inst.centered, inst.centered) / dn);
  if (sigma < 1e-12) throw ConfigError("scaling instance rejected: sigma < 1e-12 (degenerate column)");

  std::vector<double> xhat(n);
  for (std::size_t i = 0; i < n; ++i) xhat[i] = inst.centered[i] / sigma;
  // d xhat_i / d xdot_j = delta_ij / sigma - xdot_i xdot_j / (I sigma^3)
  std::vector<double> jac(n * n);
  const double s3 = sigma * sigma * sigma;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      jac[i * n + j] = (i == j ? 1.0 / sigma : 0.0) - inst.centered[i] * inst.centered[j] / (dn * s3);
  const auto grad_centered = apply_transpose(jac, n, inst.grad_standardized);

  const auto& g = inst.grad_standardized;
  const double gg = dot(g, g), xg = dot(xhat, g), xx = dot(xhat, xhat);
  const double bracket = gg + xg * xg * (xx - 2.0 * dn) / (dn * dn);
  IdentityReport r;
  r.identity = "scaling";
  r.lhs = dot(grad_centered, grad_centered);
  r.rhs = bracket / (sigma * sigma);
  const double scale = gg / (sigma * sigma);
  r.gap = relative_gap(r.lhs, r.rhs, scale);
  r.tolerance = tolerance;
  r.pass = r.gap <= tolerance;
  r.instance = describe_instance(inst.tag, n);

  const double printed = bracket / sigma;
  const double reduction = -xg * xg / dn;
  r.extra = {
      {"sigma", sigma},
      {"printed_one_over_sigma_rhs", printed},
      {"printed_one_over_sigma_gap", relative_gap(r.lhs, printed, scale)},
      {"reduction_term", reduction},
      {"xhat_norm_sq", xx},
      {"xhat_norm_rel_gap", std::abs(xx - dn) / dn},
  };
  return r;
}

CenteringInstance random_centering_instance(std::size_t patch_size, Rng& rng) {
  CenteringInstance inst;
  inst.x.resize(patch_size);
  inst.grad_centered.resize(patch_size);
  const double offset = rng.normal(0.0, 3.0);
  for (auto& v : inst.x) v = offset + rng.normal();
  for (auto& v : inst.grad_centered) v = rng.normal(rng.normal(0.0, 0.5), 1.0);
  return inst;
}

ScalingInstance random_scaling_instance(std::size_t patch_size, Rng& rng) {
  ScalingInstance inst;
  const double scale = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
  inst.centered.resize(patch_size);
  double mean = 0.0;
  for (auto& v : inst.centered) {
    v = scale * rng.normal();
    mean += v;
  }
  mean /= static_cast<double>(patch_size);
  for (auto& v : inst.centered) v -= mean;
  inst.grad_standardized.resize(patch_size);
  for (auto& v : inst.grad_standardized) v = rng.normal();
  return inst;
}

bool IdentitySuite::all_pass() const {
  for (const auto& r : centering)
    if (!r.pass) return false;
  for (const auto& r : scaling)
    if (!r.pass) return false;
  return true;
}

IdentitySuite run_identity_suite(std::size_t instances, const std::vector<std::size_t>& patch_sizes,
                                 std::uint64_t seed, double tolerance) {
  if (patch_sizes.empty()) throw ConfigError("identity suite needs at least one patch size");
  IdentitySuite suite;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::size_t n = patch_sizes[i % patch_sizes.size()];
    Rng rng(mix_seed(seed, i, 7));
    auto c = random_centering_instance(n, rng);
    c.tag = "seed=" + std::to_string(seed) + " index=" + std::to_string(i);
    suite.centering.push_back(verify_centering_identity(c, tolerance));
    ScalingInstance s;
    do {
      s = random_scaling_instance(n, rng);
    } while (std::sqrt(dot(s.centered, s.centered) / static_cast<double>(n)) < 1e-12);
    s.tag = c.tag;
    suite.scaling.push_back(verify_scaling_identity(s, tolerance));
  }
  return suite;
}

std::string to_string(PatchDistribution d) {
  switch (d) {
    case PatchDistribution::Gaussian:
      return "gaussian";
    case PatchDistribution::Uniform:
      return "uniform";
    case PatchDistribution::HeavyTailed:
      return "student_t3";
  }
  return "gaussian";
}

NormalityReport check_output_normality(std::size_t patch_size, std::size_t samples, Rng& rng,
                                       PatchDistribution dist, double weight_scale,
                                       double epsilon) {
  if (patch_size == 0) throw ConfigError("normality probe: patch size must be positive");
  NormalityReport rep;
  rep.patch_size = patch_size;
  rep.samples = samples;
  rep.distribution = to_string(dist);
  rep.degenerate = patch_size == 1;
  rep.mean_bound = samples ? 4.0 / std::sqrt(static_cast<double>(samples)) : 0.0;
  rep.bounds_checked = patch_size >= 27 && samples >= 10000;

  auto draw = [&]() {
    switch (dist) {
      case PatchDistribution::Gaussian:
        return rng.normal();
      case PatchDistribution::Uniform:
        return rng.uniform(-1.0, 1.0);
      case PatchDistribution::HeavyTailed: {
        double chi2 = 0.0;
        for (int k = 0; k < 3; ++k) {
          const double z = rng.normal();
          chi2 += z * z;
        }
        return rng.normal() / std::sqrt(chi2 / 3.0);
      }
    }
    return 0.0;
  };

  const double w_std = weight_scale / std::sqrt(static_cast<double>(patch_size));
  std::vector<double> outputs(samples);
  std::vector<double> patch(patch_size);
  for (std::size_t s = 0; s < samples; ++s) {
    const double offset = rng.normal(0.0, 2.0), scale = std::exp(rng.normal(0.0, 0.5));
    double mu = 0.0;
    for (auto& v : patch) {
      v = offset + scale * draw();
      mu += v;
    }
    mu /= static_cast<double>(patch_size);
    double var = 0.0;
    for (double v : patch) var += (v - mu) * (v - mu);
    const double denom = std::sqrt(var / static_cast<double>(patch_size)) + epsilon;
    double out = 0.0;
    for (double v : patch) {
      const double w = w_std == 0.0 ? 0.0 : rng.normal(0.0, w_std);
      out += w * (v - mu) / denom;
    }
    outputs[s] = out;
  }

  if (samples) {
    double mean = 0.0;
    for (double v : outputs) mean += v;
    mean /= static_cast<double>(samples);
    double m2 = 0.0, m4 = 0.0;
    for (double v : outputs) {
      const double d = (v - mean) * (v - mean);
      m2 += d;
      m4 += d * d;
    }
    m2 /= static_cast<double>(samples);
    m4 /= static_cast<double>(samples);
    rep.mean = mean;
    rep.variance = m2;
    rep.excess_kurtosis = m2 > 0.0 ? m4 / (m2 * m2) - 3.0 : 0.0;
  }
  rep.within_bounds = std::abs(rep.mean) < rep.mean_bound && rep.variance >= 0.9 && rep.variance <= 1.1;
  return rep;
}

template <typename T>
std::vector<TraceRow> measure_grad_norm_reduction(Model<T>& first, const std::string& first_tag,
                                                  Model<T>& second, const std::string& second_tag,
                                                  const Dataset& data, const TrainConfig& cfg,
                                                  std::size_t steps) {
  cfg.validate();
  if (data.size() == 0) throw ConfigError("grad-norm trace needs a non-empty dataset");
  struct Run {
    Model<T>* model;
    const std::string* tag;
    Sgd<T> opt;
  };
  std::vector<Run> runs{{&first, &first_tag, Sgd<T>(cfg.momentum, cfg.weight_decay)},
                        {&second, &second_tag, Sgd<T>(cfg.momentum, cfg.weight_decay)}};
  std::vector<TraceRow> rows;
  std::size_t epoch = 0, step = 0;
  auto batches = std::make_unique<BatchIterator>(data.size(), cfg.batch_size, cfg.shuffle,
                                                 mix_seed(cfg.seed, epoch, 1));
  std::vector<std::size_t> idx;
  while (step < steps) {
    if (!batches->next(idx)) {
      ++epoch;
      batches = std::make_unique<BatchIterator>(data.size(), cfg.batch_size, cfg.shuffle,
                                                mix_seed(cfg.seed, epoch, 1));
      continue;
    }
    const Batch b = gather(data, idx);
    const Tensor<T> x = prepare_inputs<T>(b.images, data);
    const double lr = lr_at_epoch(cfg, epoch);
    for (auto& run : runs) {
      auto loss = cross_entropy(run.model->forward(x, true), b.labels);
      run.model->backward(loss.grad);
      std::vector<double> norms;
      run.model->visit([&](const Layer<T>& l) {
        if (auto n = l.input_grad_norm()) norms.push_back(*n);
      });
      run.opt.step(run.model->parameters(), lr);
      const double after = cross_entropy(run.model->forward(x, false), b.labels).loss;
      for (std::size_t c = 0; c < norms.size(); ++c) {
        rows.push_back({*run.tag, step, loss.loss, std::abs(after - loss.loss), c, norms[c]});
      }
    }
    ++step;
  }
  return rows;
}

void write_trace_csv(const std::filesystem::path& file, const std::vector<TraceRow>& rows) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw FormatError("cannot write trace " + file.string());
  out << "model,step,loss,abs_loss_change,conv_index,input_grad_norm\n";
  for (const auto& r : rows) {
    out << r.model << ',' << r.step << ',' << format_double(r.loss) << ','
        << format_double(r.abs_loss_change) << ',' << r.conv_index << ','
        << format_double(r.input_grad_norm) << '\n';
  }
}

namespace {

nlohmann::json to_json(const IdentityReport& r) {
  nlohmann::json j{{"identity", r.identity}, {"lhs", r.lhs},         {"rhs", r.rhs},
                   {"gap", r.gap},           {"tolerance", r.tolerance}, {"pass", r.pass},
                   {"instance", r.instance}};
  for (const auto& [k, v] : r.extra) j[k] = v;
  return j;
}

}  // namespace

std::string identity_reports_json(const IdentitySuite& suite) {
  nlohmann::json j;
  j["all_pass"] = suite.all_pass();
  j["centering"] = nlohmann::json::array();
  j["scaling"] = nlohmann::json::array();
  for (const auto& r : suite.centering) j["centering"].push_back(to_json(r));
  for (const auto& r : suite.scaling) j["scaling"].push_back(to_json(r));
  return j.dump(2);
}

std::string normality_reports_json(const std::vector<NormalityReport>& reports) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : reports) {
    j.push_back({{"patch_size", r.patch_size},
                 {"samples", r.samples},
                 {"distribution", r.distribution},
                 {"mean", r.mean},
                 {"variance", r.variance},
                 {"excess_kurtosis", r.excess_kurtosis},
                 {"mean_bound", r.mean_bound},
                 {"degenerate", r.degenerate},
                 {"bounds_checked", r.bounds_checked},
                 {"within_bounds", r.within_bounds}});
  }
  return j.dump(2);
}

template std::vector<TraceRow> measure_grad_norm_reduction<float>(
    Model<float>&, const std::string&, Model<float>&, const std::string&, const Dataset&,
    const TrainConfig&, std::size_t);
template std::vector<TraceRow> measure_grad_norm_reduction<double>(
    Model<double>&, const std::string&, Model<double>&, const std::string&, const Dataset&,
    const TrainConfig&, std::size_t);

}  // namespace ncconv
