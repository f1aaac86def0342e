// Acceptance runner: one PASS/FAIL line per criterion.
//
//   ncconv_acceptance [--criteria 1,2,...] [--out DIR]
//
// Criterion 7 trains 6 ResNet-8 models on a CIFAR-10 subset read from $NCCONV_DATA_DIR
// and fails when the binaries are not there.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cli/commands.hpp"
#include "ncconv/gradcheck.hpp"
#include "ncconv/nc_conv.hpp"
#include "ncconv/theory.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ncconv;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

int run_cli(std::vector<std::string> args, std::ostream& log) {
  args.insert(args.begin(), "ncconv");
  std::ostringstream sink;
  return cli::run_cli(args, sink, log);
}

fs::path write_config(const fs::path& file, const json& j) {
  fs::create_directories(file.parent_path());
  std::ofstream(file) << j.dump(2);
  return file;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ConvGeometry random_geometry(Rng& rng) {
  ConvGeometry g;
  g.in_channels = 1 + rng.uniform_index(4);
  g.out_channels = 1 + rng.uniform_index(5);
  g.kernel_h = g.kernel_w = 1 + 2 * rng.uniform_index(2);
  g.stride_h = g.stride_w = 1 + rng.uniform_index(2);
  g.pad_h = g.pad_w = rng.uniform_index(2);
  g.in_h = 4 + rng.uniform_index(6);
  g.in_w = 4 + rng.uniform_index(6);
  return g;
}

Outcome criterion1(const fs::path&) {
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckOptions opts;
  const GradcheckReport rep = run_gradcheck(opts);
  const double secs = seconds_since(t0);
  std::map<std::string, std::size_t> counts;
  std::map<std::string, double> worst;
  for (const auto& c : rep.cases) {
    ++counts[c.suite];
    worst[c.suite] = std::max(worst[c.suite], c.max_error);
  }
  bool enough = true;
  std::string detail;
  for (const char* s : {"nc_conv", "conv", "group_norm", "model"}) {
    enough = enough && counts[s] >= 20;
    detail += std::string(s) + " " + std::to_string(counts[s]) + " cases worst " + fmt(worst[s]) + "; ";
  }
  detail += std::to_string(rep.failures()) + " failures, " + fmt(secs) + " s";
  return {rep.all_pass() && enough && secs < 120.0, detail};
}

Outcome identity_criterion(bool centering) {
  const IdentitySuite suite = run_identity_suite(100, {4, 9, 27}, 2024, 1e-10);
  const auto& reports = centering ? suite.centering : suite.scaling;
  double worst = 0.0, printed_min = INFINITY, printed_max = 0.0;
  bool pass = reports.size() == 100;
  for (const auto& r : reports) {
    worst = std::max(worst, r.gap);
    pass = pass && r.gap < 1e-10;
    for (const auto& [k, v] : r.extra)
      if (k == "printed_one_over_sigma_gap") {
        printed_min = std::min(printed_min, v);
        printed_max = std::max(printed_max, v);
      }
  }
  std::string detail = std::to_string(reports.size()) + " instances, worst relative gap " + fmt(worst);
  if (!centering)
    detail += "; printed 1/sigma form gap ranges " + fmt(printed_min) + " .. " + fmt(printed_max);
  return {pass, detail};
}

// A single I x 1 column as an im2col matrix.
Im2ColMatrix<double> as_column(const std::vector<double>& v) {
  ConvGeometry g;
  g.in_channels = g.out_channels = 1;
  g.kernel_h = g.in_h = 1;
  g.kernel_w = g.in_w = v.size();
  return {Tensor<double>({v.size(), 1}, v), g};
}

Outcome criterion4(const fs::path&) {
  Rng rng(404);
  bool scale_ok = true;
  double norm_gap = 0.0, const_out = 0.0, shift_gap = 0.0, scale_gap = 0.0, covariance_gap = 0.0;
  std::size_t columns = 0;
  for (int t = 0; t < 20; ++t) {
    const ConvGeometry g = random_geometry(rng);
    const auto x = randn<double>({2, g.in_channels, g.in_h, g.in_w}, rng, rng.normal(0.0, 2.0), 1.5);
    const double eps = 1e-12;
    for (const auto& m : unfold(x, g)) {
      const auto st = standardize_columns(m, eps);
      const std::size_t rows = g.patch_size(), cols = g.columns();
      for (std::size_t k = 0; k < cols; ++k) {
        const double sigma = st.stats.sigma[k];
        if (!(sigma > 0.0) || eps > 1e-8 * sigma) continue;
        double n2 = 0.0;
        for (std::size_t i = 0; i < rows; ++i) n2 += st.xhat.data.at(i, k) * st.xhat.data.at(i, k);
        norm_gap = std::max(norm_gap, std::abs(n2 - double(rows)) / double(rows));
        ++columns;

        std::vector<double> col(rows);
        for (std::size_t i = 0; i < rows; ++i) col[i] = m.data.at(i, k);
        const auto base = testing::standardize(col, eps);
        for (double c : {-7.5, 0.25, 40.0}) {
          std::vector<double> shifted(col);
          for (double& v : shifted) v += c;
          const auto s = standardize_columns(as_column(shifted), eps).xhat.data;
          for (std::size_t i = 0; i < rows; ++i) shift_gap = std::max(shift_gap, std::abs(s[i] - base[i]));
        }
        // s*x standardizes to (x - mu) / (sigma + eps/s): exact covariance, and invariance
        // up to a first-order eps/sigma term that vanishes as eps -> 0.
        for (double s : {0.5, 3.0}) {
          std::vector<double> scaled(col);
          for (double& v : scaled) v *= s;
          const auto z = standardize_columns(as_column(scaled), eps).xhat.data;
          const double ratio = (sigma + eps) / (sigma + eps / s);
          const double first_order = 2.0 * eps / (std::min(s, 1.0) * sigma);
          for (std::size_t i = 0; i < rows; ++i) {
            covariance_gap = std::max(covariance_gap, std::abs(z[i] - base[i] * ratio));
            scale_gap = std::max(scale_gap, std::abs(z[i] - base[i]));
            scale_ok = scale_ok && std::abs(z[i] - base[i]) <= 1e-10 + std::abs(base[i]) * first_order;
          }
        }
      }
    }

    auto nc = NcLayerState<double>::create(g, rng);
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t i = 0; i < g.patch_size(); ++i) nc.weights.at(o, i) = 0.5 + double(o);
    const auto y = nc_forward(x, nc, g, false);
    for (double v : y.data()) const_out = std::max(const_out, std::abs(v));
  }
  const bool pass = norm_gap <= 1e-9 && const_out <= 1e-10 && shift_gap <= 1e-10 && covariance_gap <= 1e-10 &&
         scale_ok && columns > 0;
  return {pass, std::to_string(columns) + " columns: ||xhat||^2 rel gap " + fmt(norm_gap) +
                    ", constant-filter |y| " + fmt(const_out) + ", shift " + fmt(shift_gap) +
                    ", scale covariance " + fmt(covariance_gap) + ", scale deviation " + fmt(scale_gap) +
                    (scale_ok ? " (within eps/sigma)" : " (exceeds eps/sigma)")};
}

Outcome criterion5(const fs::path&) {
  Rng rng(505);
  double conv_gap = 0.0;
  bool nc_exact = true;
  for (int t = 0; t < 10; ++t) {
    const ConvGeometry g = random_geometry(rng);
    const auto x = testing::gaussian({2, g.in_channels, g.in_h, g.in_w}, 100 + t);
    auto conv = ConvLayerState<double>::create(g, rng);
    const auto fast = conv_forward(x, conv, g, false);
    const auto ref = testing::naive_conv(x, conv.weights, g);
    conv_gap = std::max(conv_gap, testing::max_abs_diff(fast.data(), ref.data()));

    auto nc = NcLayerState<double>::create(g, rng);
    const auto y = nc_forward(x, nc, g, false);
    const auto patches = unfold(x, g);
    for (std::size_t s = 0; s < patches.size(); ++s) {
      const auto z = matmul(nc.weights, standardize_columns(patches[s], nc.epsilon).xhat.data);
      const auto ys = y.slice(s);
      for (std::size_t i = 0; i < z.size(); ++i) nc_exact = nc_exact && ys[i] == z[i];
    }
  }
  return {conv_gap <= 1e-10 && nc_exact,
          "10 geometries: im2col vs naive max |diff| " + fmt(conv_gap) +
              (nc_exact ? ", NC equals standardize-then-GEMM bit for bit" : ", NC differs from standardize-then-GEMM")};
}

Outcome criterion6(const fs::path&) {
  Rng rng(mix_seed(606, 0, 6));
  const auto r = check_output_normality(27, 100000, rng, PatchDistribution::Gaussian);
  const bool pass = std::abs(r.mean) < 0.013 && r.variance >= 0.9 && r.variance <= 1.1;
  return {pass, "I=27 n=100000: mean " + fmt(r.mean) + ", variance " + fmt(r.variance) +
                    ", excess kurtosis " + fmt(r.excess_kurtosis)};
}

Outcome criterion7(const fs::path& out) {
  const char* dir = std::getenv(cli::kDataDirEnv);
  if (!dir || !*dir)
    return {false, std::string(cli::kDataDirEnv) + " is not set; CIFAR-10 binaries are required"};
  const fs::path root = out / "criterion7";
  struct Arm {
    const char* tag;
    const char* conv;
    const char* norm;
  };
  const Arm arms[] = {{"nc", "nc", "none"}, {"gn", "standard", "groupnorm"}};
  std::map<std::string, std::vector<double>> final_loss;
  bool pass = true;
  std::string failures;
  fs::create_directories(root);
  std::ofstream cmp(root / "comparison.csv", std::ios::trunc);
  cmp << "model,seed,epoch,val_loss,val_top1_acc\n";
  for (const auto& arm : arms) {
    for (std::uint64_t seed : {1, 2, 3}) {
      const fs::path run = root / (std::string(arm.tag) + "_seed" + std::to_string(seed));
      const json cfg{{"out", run.string()},
                     {"seed", seed},
                     {"model", {{"arch", "resnet8"}, {"conv", arm.conv}, {"norm", arm.norm}, {"activation", "relu"}}},
                     {"data", {{"dataset", "cifar10"}, {"dir", dir}, {"train_per_class", 500}, {"test_per_class", 100}}},
                     {"train",
                      {{"epochs", 10},
                       {"batch_size", 2},
                       {"lr", 0.01},
                       {"lr_decay_every", 30},
                       {"lr_decay_factor", 0.1},
                       {"hflip", true},
                       {"shift_frac", 0.1}}}};
      const int code = run_cli({"train", "--config", write_config(root / (run.filename().string() + ".json"), cfg).string()},
                               std::cerr);
      if (code != 0) {
        pass = false;
        failures += std::string(arm.tag) + " seed " + std::to_string(seed) + " exit " + std::to_string(code) + "; ";
        continue;
      }
      const json summary = json::parse(slurp(run / "summary.json"));
      for (const auto& h : summary["history"])
        cmp << arm.tag << ',' << seed << ',' << h["epoch"] << ',' << h["val_loss"].get<double>() << ','
            << h["val_top1_acc"].get<double>() << '\n';
      const double v = summary["final"]["val_loss"].get<double>();
      final_loss[arm.tag].push_back(v);
      if (!summary["all_finite"].get<bool>() || !(v < 2.0)) {
        pass = false;
        failures += std::string(arm.tag) + " seed " + std::to_string(seed) + " val_loss " + fmt(v) + "; ";
      }
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double e : v) s += e;
    return v.empty() ? NAN : s / double(v.size());
  };
  const double nc = mean(final_loss["nc"]), gn = mean(final_loss["gn"]);
  std::string detail = failures + "mean final val_loss NC " + fmt(nc) + " GN " + fmt(gn) +
                       (nc <= gn ? " (NC <= GN)" : " (NC > GN)") + "; curves in " + (root / "comparison.csv").string();
  return {pass, detail};
}

Outcome criterion8(const fs::path& out) {
  const fs::path root = out / "criterion8";
  fs::remove_all(root);
  const json base{{"seed", 11},
                  {"model", {{"arch", "resnet8"}, {"width", 4}}},
                  {"data",
                   {{"dataset", "synthetic"},
                    {"synthetic", {{"train", 40}, {"test", 20}, {"classes", 4}, {"shape", {3, 12, 12}}}}}},
                  {"train", {{"epochs", 2}, {"hflip", true}, {"shift_frac", 0.1}}}};
  const auto cfg = write_config(root / "config.json", base);
  const int a = run_cli({"train", "--config", cfg.string(), "--out", (root / "a").string()}, std::cerr);
  const int b = run_cli({"train", "--config", cfg.string(), "--out", (root / "b").string()}, std::cerr);
  if (a != 0 || b != 0) return {false, "train exited " + std::to_string(a) + " / " + std::to_string(b)};
  const std::string ma = slurp(root / "a" / "metrics.csv"), mb = slurp(root / "b" / "metrics.csv");
  const bool same = !ma.empty() && ma == mb;
  return {same, std::to_string(ma.size()) + " bytes, " + (same ? "byte-identical" : "differ")};
}

Outcome criterion9(const fs::path& out) {
  const fs::path root = out / "criterion9";
  const json cfg{{"out", (root / "run").string()}, {"gradcheck", {{"perturb_analytic", true}}}};
  const int code = run_cli({"gradcheck", "--config", write_config(root / "config.json", cfg).string()}, std::cerr);
  return {code == 1, "perturbed gradcheck exit code " + std::to_string(code)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner", "ncconv_acceptance"};
  std::vector<int> criteria{1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::string out = "acceptance-out";
  app.add_option("--criteria", criteria, "criteria to run")->delimiter(',')->check(CLI::Range(1, 9));
  app.add_option("--out", out, "directory for run artifacts");
  CLI11_PARSE(app, argc, argv);

  const std::map<int, std::function<Outcome(const fs::path&)>> table{
      {1, criterion1},
      {2, [](const fs::path&) { return identity_criterion(true); }},
      {3, [](const fs::path&) { return identity_criterion(false); }},
      {4, criterion4},
      {5, criterion5},
      {6, criterion6},
      {7, criterion7},
      {8, criterion8},
      {9, criterion9},
  };
  fs::create_directories(out);
  const std::set<int> wanted(criteria.begin(), criteria.end());
  bool all = true;
  for (int id : wanted) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = table.at(id)(out);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << " (" << fmt(seconds_since(t0))
              << " s) " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
