#include "ncconv/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ncconv/activation.hpp"
#include "ncconv/group_norm.hpp"
#include "ncconv/loss.hpp"
#include "ncconv/model.hpp"
#include "ncconv/nc_conv.hpp"

namespace ncconv {

bool GradcheckReport::all_pass() const { return failures() == 0; }

std::size_t GradcheckReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(cases.begin(), cases.end(), [](const auto& c) { return !c.pass; }));
}

double relative_gradient_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw DimensionError("gradient length mismatch");
  double diff = 0.0, scale = 1e-8;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return diff / scale;
}

std::vector<double> numerical_gradient(const std::function<double()>& f, std::span<double> x,
                                       double step) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + step;
    const double up = f();
    x[i] = orig - step;
    const double down = f();
    x[i] = orig;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

namespace {

using Tn = Tensor<double>;

struct CaseBuilder {
  GradcheckCase c;
  double tolerance;

  void check(const std::string& name, const Tn& analytic, const std::vector<double>& numeric) {
    const double e = relative_gradient_error(analytic.data(), numeric);
    c.errors.emplace_back(name, e);
    c.max_error = std::max(c.max_error, e);
  }
  GradcheckCase finish() {
    c.pass = c.max_error <= tolerance && std::isfinite(c.max_error);
    return std::move(c);
  }
};

double weighted_sum(const Tn& y, const Tn& r) { return dot<double>(y.data(), r.data()); }

ConvGeometry random_geometry(std::size_t index, Rng& rng) {
  const std::size_t combo = index % 8;
  ConvGeometry g;
  g.kernel_h = g.kernel_w = (combo & 1) ? 3 : 1;
  g.stride_h = g.stride_w = (combo & 2) ? 2 : 1;
  g.pad_h = g.pad_w = (combo & 4) ? 1 : 0;
  g.in_channels = g.kernel_h == 1 ? 3 + rng.uniform_index(2) : 1 + rng.uniform_index(3);
  g.out_channels = 1 + rng.uniform_index(3);
  const std::size_t lo = std::max<std::size_t>(g.kernel_h, 3);
  g.in_h = lo + rng.uniform_index(7 - lo);
  g.in_w = lo + rng.uniform_index(7 - lo);
  return g;
}

Tn random_input(const ConvGeometry& g, std::size_t batch, Rng& rng) {
  return randn<double>({batch, g.in_channels, g.in_h, g.in_w}, rng, rng.normal(0.0, 1.0), 1.0);
}

// Smallest positive column sigma across the cached forward; zero sigma only occurs for
// columns made entirely of padding.
double min_positive_sigma(const NcLayerState<double>& s) {
  double m = INFINITY;
  for (const auto& st : s.cache.stats)
    for (double v : st.sigma.data())
      if (v > 0.0) m = std::min(m, v);
  return m;
}

}  // namespace

GradcheckReport gradcheck_nc_conv(const GradcheckOptions& opts) {
  GradcheckReport report;
  for (std::size_t i = 0; i < opts.configs; ++i) {
    Rng rng(mix_seed(opts.seed, i, 101));
    const ConvGeometry g = random_geometry(i, rng);
    const std::size_t batch = 1 + rng.uniform_index(2);
    NcLayerState<double> st;
    Tn x;
    for (int attempt = 0;; ++attempt) {
      st = NcLayerState<double>::create(g, rng);
      st.gamma = randn<double>({g.out_channels}, rng, 1.0, 0.5);
      st.beta = randn<double>({g.out_channels}, rng, 0.0, 1.0);
      x = random_input(g, batch, rng);
      nc_forward(x, st, g);
      if (min_positive_sigma(st) >= 0.1 || attempt == 100) break;
    }
    const Tn r = randn<double>({batch, g.out_channels, g.out_h(), g.out_w()}, rng, 0.0, 1.0);
    auto grads = nc_backward(r, st, g);
    if (opts.perturb_analytic) grads.grad_weights[0] += 0.01 * std::max(1.0, max_abs<double>(grads.grad_weights.data()));

    auto loss = [&] {
      NcLayerState<double> tmp{st.weights, st.gamma, st.beta, st.epsilon, {}};
      return weighted_sum(nc_forward(x, tmp, g, false), r);
    };
    CaseBuilder cb{{"nc_conv", g.describe() + " N=" + std::to_string(batch), {}, 0.0, false},
                   opts.tolerance};
    cb.check("grad_x", grads.grad_x, numerical_gradient(loss, x.data(), opts.step));
    cb.check("grad_weights", grads.grad_weights, numerical_gradient(loss, st.weights.data(), opts.step));
    cb.check("grad_gamma", grads.grad_gamma, numerical_gradient(loss, st.gamma.data(), opts.step));
    cb.check("grad_beta", grads.grad_beta, numerical_gradient(loss, st.beta.data(), opts.step));
    report.cases.push_back(cb.finish());
  }
  return report;
}

GradcheckReport gradcheck_conv(const GradcheckOptions& opts) {
  GradcheckReport report;
  for (std::size_t i = 0; i < opts.configs; ++i) {
    Rng rng(mix_seed(opts.seed, i, 202));
    const ConvGeometry g = random_geometry(i, rng);
    const std::size_t batch = 1 + rng.uniform_index(2);
    auto st = ConvLayerState<double>::create(g, rng);
    Tn x = random_input(g, batch, rng);
    conv_forward(x, st, g);
    const Tn r = randn<double>({batch, g.out_channels, g.out_h(), g.out_w()}, rng, 0.0, 1.0);
    const auto grads = conv_backward(r, st, g);
    auto loss = [&] {
      ConvLayerState<double> tmp{st.weights, {}};
      return weighted_sum(conv_forward(x, tmp, g, false), r);
    };
    CaseBuilder cb{{"conv", g.describe() + " N=" + std::to_string(batch), {}, 0.0, false},
                   opts.tolerance};
    cb.check("grad_x", grads.grad_x, numerical_gradient(loss, x.data(), opts.step));
    cb.check("grad_weights", grads.grad_weights, numerical_gradient(loss, st.weights.data(), opts.step));
    report.cases.push_back(cb.finish());
  }
  return report;
}

GradcheckReport gradcheck_groupnorm(const GradcheckOptions& opts) {
  GradcheckReport report;
  for (std::size_t i = 0; i < opts.configs; ++i) {
    Rng rng(mix_seed(opts.seed, i, 303));
    const std::size_t channels = 2 * (1 + rng.uniform_index(3));
    std::vector<std::size_t> divisors;
    for (std::size_t d = 1; d <= channels; ++d)
      if (channels % d == 0) divisors.push_back(d);
    const std::size_t groups = divisors[rng.uniform_index(divisors.size())];
    const std::size_t batch = 1 + rng.uniform_index(2), h = 2 + rng.uniform_index(3),
                      w = 2 + rng.uniform_index(3);
    auto st = GroupNormState<double>::create(channels, groups);
    st.gamma = randn<double>({channels}, rng, 1.0, 0.5);
    st.beta = randn<double>({channels}, rng, 0.0, 1.0);
    const double offset = rng.normal();
    const double spread = 1.0 + rng.uniform();
    Tn x = randn<double>({batch, channels, h, w}, rng, offset, spread);
    groupnorm_forward(x, st);
    const Tn r = randn<double>(x.shape(), rng, 0.0, 1.0);
    const auto grads = groupnorm_backward(r, st);
    auto loss = [&] {
      GroupNormState<double> tmp{st.groups, st.gamma, st.beta, st.epsilon, {}};
      return weighted_sum(groupnorm_forward(x, tmp, false), r);
    };
    std::ostringstream desc;
    desc << "C=" << channels << " G=" << groups << " N=" << batch << " HxW=" << h << 'x' << w;
    CaseBuilder cb{{"group_norm", desc.str(), {}, 0.0, false}, opts.tolerance};
    cb.check("grad_x", grads.grad_x, numerical_gradient(loss, x.data(), opts.step));
    cb.check("grad_gamma", grads.grad_gamma, numerical_gradient(loss, st.gamma.data(), opts.step));
    cb.check("grad_beta", grads.grad_beta, numerical_gradient(loss, st.beta.data(), opts.step));
    report.cases.push_back(cb.finish());
  }
  return report;
}

GradcheckReport gradcheck_activations(const GradcheckOptions& opts) {
  GradcheckReport report;
  const Activation kinds[] = {Activation::Identity, Activation::ReLU, Activation::ELU,
                              Activation::SELU};
  for (std::size_t i = 0; i < 12; ++i) {
    const Activation a = kinds[i % 4];
    Rng rng(mix_seed(opts.seed, i, 404));
    Tn x({64});
    for (auto& v : x.data()) {
      do {
        v = rng.normal(0.0, 2.0);
      } while (std::abs(v) < 1e-4);
    }
    const Tn r = randn<double>(x.shape(), rng, 0.0, 1.0);
    const Tn analytic = activation_backward(r, x, a);
    auto loss = [&] { return weighted_sum(activation_forward(x, a), r); };
    CaseBuilder cb{{"activation", to_string(a), {}, 0.0, false}, opts.activation_tolerance};
    cb.check("grad_x", analytic, numerical_gradient(loss, x.data(), opts.step));
    report.cases.push_back(cb.finish());
  }
  return report;
}

GradcheckReport gradcheck_model(const GradcheckOptions& opts) {
  GradcheckReport report;
  for (std::size_t i = 0; i < opts.configs; ++i) {
    Rng rng(mix_seed(opts.seed, i, 505));
    const ConvGeometry g = random_geometry(i, rng);
    const std::size_t batch = 1 + rng.uniform_index(2), classes = 3;
    ModelSpec spec;
    spec.name = "nc_relu_linear";
    spec.input = {g.in_channels, g.in_h, g.in_w};
    spec.layers = {ConvSpec{ConvKind::Normalized, g.out_channels, g.kernel_h, g.stride_h, g.pad_h},
                   ActivationSpec{Activation::ReLU}, LinearSpec{classes}};

    // Resample until every pre-activation sits at least 1e-3 from the ReLU kink and every
    // non-padding patch is well conditioned.
    std::optional<Model<double>> model;
    Tn x;
    std::vector<int> labels(batch);
    for (int attempt = 0;; ++attempt) {
      model.emplace(build_model<double>(spec, rng));
      for (auto& p : model->parameters()) {
        if (p.name.ends_with("gamma")) *p.value = randn<double>(p.value->shape(), rng, 1.0, 0.3);
        if (p.name.ends_with("beta") || p.name.ends_with("bias"))
          *p.value = randn<double>(p.value->shape(), rng, 0.0, 0.5);
      }
      x = random_input(g, batch, rng);
      for (auto& l : labels) l = static_cast<int>(rng.uniform_index(classes));
      auto& nc = dynamic_cast<NcConvLayer<double>&>(model->layer(0));
      const Tn pre = nc.forward(x, true);
      double margin = INFINITY;
      for (double v : pre.data()) margin = std::min(margin, std::abs(v));
      if ((margin >= 1e-3 && min_positive_sigma(nc.state()) >= 0.1) || attempt == 100) break;
    }

    const Tn logits = model->forward(x, true);
    model->backward(cross_entropy(logits, labels).grad);
    auto params = model->parameters();
    auto loss = [&] { return cross_entropy(model->forward(x, false), labels).loss; };
    CaseBuilder cb{{"model", "nc_conv(" + g.describe() + ")->relu->linear N=" + std::to_string(batch),
                    {}, 0.0, false},
                   opts.tolerance};
    for (auto& p : params) {
      const Tn analytic = *p.grad;
      cb.check(p.name, analytic, numerical_gradient(loss, p.value->data(), opts.step));
    }
    report.cases.push_back(cb.finish());
  }
  return report;
}

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  GradcheckReport all;
  for (auto* suite : {&gradcheck_nc_conv, &gradcheck_conv, &gradcheck_groupnorm,
                      &gradcheck_activations, &gradcheck_model}) {
    auto r = suite(opts);
    all.cases.insert(all.cases.end(), r.cases.begin(), r.cases.end());
  }
  return all;
}

}  // namespace ncconv
