#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ncconv/checkpoint.hpp"
#include "ncconv/error.hpp"
#include "ncconv/gradcheck.hpp"
#include "ncconv/metrics.hpp"
#include "ncconv/parallel.hpp"
#include "ncconv/theory.hpp"

namespace ncconv::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Salts for the per-purpose seed streams derived from cfg.seed.
enum Stream : std::uint64_t {
  kSynthData = 3,
  kSubset = 4,
  kModelInit = 5,
  kNormality = 6,
  kBenchCheck = 7,
  kBenchTiming = 8,
};

void prepare_run(const RunConfig& cfg) {
  set_num_threads(cfg.deterministic ? 1 : cfg.threads);
  fs::create_directories(cfg.out);
  std::ofstream(fs::path(cfg.out) / kResolvedConfigName) << to_json(cfg);
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + file.string());
  out << text;
}

double since_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

DatasetSplit split_synthetic(const SyntheticConfig& s, bool normalize, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0, kSynthData));
  // One draw so both splits share the class prototypes.
  Dataset all = synth_classification(s.train + s.test, s.classes, Shape(s.shape.begin(), s.shape.end()),
                                     rng, s.separable);
  auto take = [&](std::size_t from, std::size_t count, const char* name) {
    std::vector<std::size_t> idx(count);
    for (std::size_t i = 0; i < count; ++i) idx[i] = from + i;
    Batch b = gather(all, idx);
    Dataset d;
    d.name = name;
    d.images = std::move(b.images);
    d.labels = std::move(b.labels);
    d.class_count = s.classes;
    return d;
  };
  DatasetSplit split{take(0, s.train, "synthetic-train"), take(s.train, s.test, "synthetic-test")};
  if (normalize && s.shape.size() == 3 && s.train > 0) {
    compute_channel_stats(split.train);
    split.test.channel_mean = split.train.channel_mean;
    split.test.channel_std = split.train.channel_std;
    split.train.normalize = split.test.normalize = true;
  }
  return split;
}

ModelSpec model_spec_for(const RunConfig& cfg, const Dataset& train, const std::string& arch,
                         ConvKind conv, std::size_t width) {
  ModelSpec spec = named_model_spec(arch, conv, parse_norm_kind(cfg.model.norm),
                                    parse_activation(cfg.model.activation), train.sample_shape(),
                                    train.class_count, width, cfg.model.groups);
  spec.epsilon = cfg.model.epsilon;
  return spec;
}

template <typename T>
Model<T> make_model(const RunConfig& cfg, const Dataset& train) {
  Rng rng(mix_seed(cfg.seed, 0, kModelInit));
  return build_model<T>(
      model_spec_for(cfg, train, cfg.model.arch, parse_conv_kind(cfg.model.conv), cfg.model.width), rng);
}

json record_json(const MetricsRecord& r) {
  return {{"epoch", r.epoch},
          {"step", r.step},
          {"train_loss", r.train_loss},
          {"train_acc", r.train_acc},
          {"val_loss", r.val_loss},
          {"val_top1_acc", r.val_top1},
          {"val_top5_acc", r.val_top5},
          {"val_top1_err", 1.0 - r.val_top1},
          {"val_top5_err", 1.0 - r.val_top5},
          {"mean_grad_norm", r.mean_grad_norm},
          {"lr", r.lr}};
}

bool finite_record(const MetricsRecord& r) {
  return std::isfinite(r.train_loss) && std::isfinite(r.val_loss) && std::isfinite(r.mean_grad_norm);
}

template <typename T>
Tensor<T> scalar_entry(double v) {
  return Tensor<T>(Shape{1}, static_cast<T>(v));
}

template <typename T>
double find_scalar(const std::vector<NamedTensor<T>>& entries, const std::string& name) {
  for (const auto& e : entries)
    if (e.name == name && e.value.size() == 1) return static_cast<double>(e.value[0]);
  throw FormatError("checkpoint has no scalar entry '" + name + "'");
}

// Resolved GroupNorm group count of every GN layer, in visit order.
template <typename T>
json group_counts(const Model<T>& model) {
  json counts = json::array();
  model.visit([&](const Layer<T>& l) {
    if (const auto* gn = dynamic_cast<const GroupNormLayer<T>*>(&l)) counts.push_back(gn->groups());
  });
  return counts;
}

template <typename T>
int train_impl(const RunConfig& cfg, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path out(cfg.out);
  DatasetSplit data = load_data(cfg);
  if (data.train.size() == 0) throw ConfigError("training split is empty");
  Model<T> model = make_model<T>(cfg, data.train);

  TrainConfig tc = cfg.train.params;
  tc.seed = cfg.seed;
  Sgd<T> opt(tc.momentum, tc.weight_decay);
  std::size_t start_epoch = 0, global_step = 0;
  if (!cfg.train.resume_from.empty()) {
    const auto extra = load_checkpoint(model, cfg.train.resume_from);
    start_epoch = static_cast<std::size_t>(find_scalar(extra, "meta/next_epoch"));
    global_step = static_cast<std::size_t>(find_scalar(extra, "meta/global_step"));
    for (const auto& e : extra)
      if (e.name.starts_with("velocity/")) opt.velocity()[e.name.substr(9)] = e.value;
    log << "resumed from " << cfg.train.resume_from << " at epoch " << start_epoch << "\n";
  }

  const bool wall = !cfg.deterministic;
  MetricsCsv metrics(out / "metrics.csv", wall);
  const fs::path steps_file = out / "steps.csv";
  const bool new_steps = !fs::exists(steps_file) || fs::file_size(steps_file) == 0;
  std::ofstream steps(steps_file, std::ios::app);
  if (new_steps) steps << "epoch,step,loss,grad_norm\n";
  if (cfg.train.save_checkpoints) fs::create_directories(out / "checkpoints");

  log << "model " << model.spec().name << ": " << model.parameter_count() << " parameters, "
      << data.train.size() << " train / " << data.test.size() << " test samples\n";

  std::vector<MetricsRecord> history;
  for (std::size_t epoch = start_epoch; epoch < tc.epochs; ++epoch) {
    MetricsRecord rec = train_epoch(model, data.train, tc, epoch, opt, global_step,
                                    [&](const StepEvent& e) {
                                      steps << e.epoch << ',' << e.step << ',' << format_double(e.loss)
                                            << ',' << format_double(e.grad_norm) << '\n';
                                    });
    const MetricsRecord val = evaluate(model, data.test, tc.eval_batch_size);
    rec.val_loss = val.val_loss;
    rec.val_top1 = val.val_top1;
    rec.val_top5 = val.val_top5;
    metrics.append(rec);
    steps.flush();
    history.push_back(rec);
    log << "epoch " << epoch << " lr " << rec.lr << " train_loss " << rec.train_loss << " train_acc "
        << rec.train_acc << " val_loss " << rec.val_loss << " val_top1 " << rec.val_top1 << "\n";

    if (cfg.train.save_checkpoints) {
      std::vector<NamedTensor<T>> extra{{"meta/next_epoch", scalar_entry<T>(double(epoch + 1))},
                                        {"meta/global_step", scalar_entry<T>(double(global_step))}};
      for (const auto& [name, v] : opt.velocity()) extra.push_back({"velocity/" + name, v});
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03zu.ncck", epoch + 1);
      save_checkpoint(model, out / "checkpoints" / name, extra);
      fs::copy_file(out / "checkpoints" / name, out / "last.ncck", fs::copy_options::overwrite_existing);
    }
  }

  json summary = {{"model", model.spec().name},
                  {"dtype", cfg.dtype},
                  {"parameters", model.parameter_count()},
                  {"train_samples", data.train.size()},
                  {"test_samples", data.test.size()},
                  {"group_norm_groups", group_counts(model)},
                  {"start_epoch", start_epoch},
                  {"epochs", tc.epochs},
                  {"steps", global_step},
                  {"elapsed_ms", since_ms(t0)}};
  bool finite = true;
  json epochs = json::array();
  const MetricsRecord* best = nullptr;
  for (const auto& r : history) {
    finite = finite && finite_record(r);
    epochs.push_back(record_json(r));
    if (!best || r.val_loss < best->val_loss) best = &r;
  }
  summary["all_finite"] = finite;
  summary["history"] = epochs;
  if (!history.empty()) {
    summary["final"] = record_json(history.back());
    summary["best_val_loss"] = best->val_loss;
  }
  write_text(out / "summary.json", summary.dump(2) + "\n");
  return finite ? kExitOk : kExitCheckFailed;
}

template <typename T>
int eval_impl(const RunConfig& cfg, std::ostream& log) {
  if (cfg.eval.checkpoint.empty()) throw ConfigError("eval.checkpoint is required");
  if (!fs::exists(cfg.eval.checkpoint))
    throw ConfigError("checkpoint not found: " + cfg.eval.checkpoint);
  DatasetSplit data = load_data(cfg);
  Model<T> model = make_model<T>(cfg, data.train);
  load_checkpoint(model, cfg.eval.checkpoint);
  const MetricsRecord r = evaluate(model, data.test, cfg.eval.batch_size);
  json j = {{"checkpoint", cfg.eval.checkpoint},
            {"samples", data.test.size()},
            {"loss", r.val_loss},
            {"top1_acc", r.val_top1},
            {"top5_acc", r.val_top5},
            {"top1_err", 1.0 - r.val_top1},
            {"top5_err", 1.0 - r.val_top5}};
  write_text(fs::path(cfg.out) / "eval.json", j.dump(2) + "\n");
  log << "loss " << r.val_loss << " top1_acc " << r.val_top1 << " top5_acc " << r.val_top5
      << " top1_err " << 1.0 - r.val_top1 << " top5_err " << 1.0 - r.val_top5 << "\n";
  return std::isfinite(r.val_loss) ? kExitOk : kExitCheckFailed;
}

template <typename T>
void run_trace(const RunConfig& cfg, std::ostream& log) {
  DatasetSplit data = load_data(cfg);
  auto build = [&](ConvKind kind) {
    Rng rng(mix_seed(cfg.seed, 0, kModelInit));
    return build_model<T>(model_spec_for(cfg, data.train, cfg.theory.trace_arch, kind, cfg.theory.trace_width), rng);
  };
  Model<T> nc = build(ConvKind::Normalized);
  Model<T> plain = build(ConvKind::Standard);
  TrainConfig tc = cfg.train.params;
  tc.seed = cfg.seed;
  const auto rows = measure_grad_norm_reduction(nc, "nc", plain, "conv", data.train, tc, cfg.theory.trace_steps);
  write_trace_csv(fs::path(cfg.out) / "trace.csv", rows);
  log << "trace: " << rows.size() << " rows written\n";
}

PatchDistribution parse_distribution(const std::string& s) {
  if (s == "gaussian") return PatchDistribution::Gaussian;
  if (s == "uniform") return PatchDistribution::Uniform;
  return PatchDistribution::HeavyTailed;
}

template <typename T>
double median_ms(std::size_t repeats, const std::function<void()>& fn) {
  std::vector<double> t(repeats);
  for (auto& v : t) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    v = since_ms(t0);
  }
  std::nth_element(t.begin(), t.begin() + t.size() / 2, t.end());
  return t[t.size() / 2];
}

ConvGeometry to_geometry(const BenchGeometry& b) {
  ConvGeometry g;
  g.in_channels = b.in_channels;
  g.out_channels = b.out_channels;
  g.kernel_h = g.kernel_w = b.kernel;
  g.stride_h = g.stride_w = b.stride;
  g.pad_h = g.pad_w = b.padding;
  g.in_h = b.height;
  g.in_w = b.width;
  g.validate();
  if (b.batch == 0 || g.out_h() == 0 || g.out_w() == 0)
    throw GeometryError("zero-size geometry: " + g.describe() + " batch " + std::to_string(b.batch));
  return g;
}

template <typename T>
int bench_impl(const RunConfig& cfg, std::ostream& log) {
  std::vector<ConvGeometry> geos;
  for (const auto& b : cfg.bench.geometries) geos.push_back(to_geometry(b));

  // Correctness gate in float32 before any timing row exists.
  for (std::size_t i = 0; i < geos.size(); ++i) {
    Rng rng(mix_seed(cfg.seed, i, kBenchCheck));
    const auto& g = geos[i];
    const auto x = randn<float>({cfg.bench.geometries[i].batch, g.in_channels, g.in_h, g.in_w}, rng, 0.0f, 1.0f);
    auto st = ConvLayerState<float>::create(g, rng);
    const auto fast = conv_forward(x, st, g, false);
    const auto ref = conv_naive(x, st.weights, g);
    float worst = 0.0f;
    for (std::size_t k = 0; k < ref.size(); ++k) worst = std::max(worst, std::abs(fast[k] - ref[k]));
    if (!(worst <= 1e-4f)) {
      log << "bench: im2col output differs from naive loop by " << worst << " on " << g.describe() << "\n";
      return kExitCheckFailed;
    }
  }

  std::ofstream csv(fs::path(cfg.out) / "bench.csv", std::ios::trunc);
  csv << "geometry,batch,in_channels,out_channels,kernel,stride,padding,height,width,dtype,method,"
         "repeats,median_ms,ms_per_image\n";
  for (std::size_t i = 0; i < geos.size(); ++i) {
    const auto& g = geos[i];
    const auto& b = cfg.bench.geometries[i];
    Rng rng(mix_seed(cfg.seed, i, kBenchTiming));
    const auto x = randn<T>({b.batch, g.in_channels, g.in_h, g.in_w}, rng, T(0), T(1));
    auto conv = ConvLayerState<T>::create(g, rng);
    auto nc = NcLayerState<T>::create(g, rng);
    const std::pair<const char*, std::function<void()>> methods[] = {
        {"naive", [&] { conv_naive(x, conv.weights, g); }},
        {"im2col_gemm", [&] { conv_forward(x, conv, g, false); }},
        {"nc_forward", [&] { nc_forward(x, nc, g, false); }},
    };
    for (const auto& [name, fn] : methods) {
      const double ms = median_ms<T>(cfg.bench.repeats, fn);
      csv << i << ',' << b.batch << ',' << b.in_channels << ',' << b.out_channels << ',' << b.kernel
          << ',' << b.stride << ',' << b.padding << ',' << b.height << ',' << b.width << ','
          << cfg.dtype << ',' << name << ',' << cfg.bench.repeats << ',' << ms << ','
          << ms / double(b.batch) << '\n';
      log << g.describe() << " " << name << " median " << ms << " ms\n";
    }
  }
  return kExitOk;
}

template <template <typename> class F>
int dispatch(const RunConfig& cfg, std::ostream& log) {
  return cfg.dtype == "float64" ? F<double>::run(cfg, log) : F<float>::run(cfg, log);
}

template <typename T>
struct TrainCmd {
  static int run(const RunConfig& c, std::ostream& l) { return train_impl<T>(c, l); }
};
template <typename T>
struct EvalCmd {
  static int run(const RunConfig& c, std::ostream& l) { return eval_impl<T>(c, l); }
};
template <typename T>
struct BenchCmd {
  static int run(const RunConfig& c, std::ostream& l) { return bench_impl<T>(c, l); }
};
template <typename T>
struct TraceCmd {
  static int run(const RunConfig& c, std::ostream& l) {
    run_trace<T>(c, l);
    return kExitOk;
  }
};

}  // namespace

DatasetSplit load_data(const RunConfig& cfg) {
  const auto& d = cfg.data;
  DatasetSplit split;
  if (d.dataset == "synthetic") {
    split = split_synthetic(d.synthetic, d.normalize, cfg.seed);
  } else {
    std::string dir = d.dir;
    if (dir.empty())
      if (const char* env = std::getenv(kDataDirEnv)) dir = env;
    if (dir.empty())
      throw ConfigError("no data directory: set data.dir or " + std::string(kDataDirEnv));
    if (!fs::is_directory(dir)) throw ConfigError("data directory not found: " + dir);
    split = d.dataset == "cifar10" ? load_cifar10(dir, d.normalize) : load_mnist_idx(dir, d.normalize);
  }
  if (d.train_per_class > 0) split.train = subset(split.train, d.train_per_class, mix_seed(cfg.seed, 0, kSubset));
  if (d.test_per_class > 0) split.test = subset(split.test, d.test_per_class, mix_seed(cfg.seed, 1, kSubset));
  return split;
}

int cmd_gradcheck(const RunConfig& cfg, std::ostream& log) {
  prepare_run(cfg);
  const GradcheckReport report = run_gradcheck(cfg.gradcheck);
  json cases = json::array();
  for (const auto& c : report.cases) {
    log << (c.pass ? "ok   " : "FAIL ") << c.suite << " [" << c.description << "] max_rel_err "
        << c.max_error << "\n";
    json errs = json::object();
    for (const auto& [name, e] : c.errors) errs[name] = e;
    cases.push_back({{"suite", c.suite}, {"description", c.description}, {"max_error", c.max_error},
                     {"pass", c.pass}, {"errors", errs}});
  }
  json j = {{"tolerance", cfg.gradcheck.tolerance},
            {"activation_tolerance", cfg.gradcheck.activation_tolerance},
            {"cases", cases},
            {"failures", report.failures()}};
  write_text(fs::path(cfg.out) / "gradcheck.json", j.dump(2) + "\n");
  log << report.cases.size() - report.failures() << "/" << report.cases.size() << " cases pass\n";
  return report.all_pass() ? kExitOk : kExitCheckFailed;
}

int cmd_verify_theory(const RunConfig& cfg, std::ostream& log) {
  prepare_run(cfg);
  const fs::path out(cfg.out);
  const auto& th = cfg.theory;
  const IdentitySuite suite = run_identity_suite(th.instances, th.patch_sizes, cfg.seed, th.tolerance);
  write_text(out / "identities.json", identity_reports_json(suite));
  auto worst = [](const std::vector<IdentityReport>& rs) {
    double w = 0.0;
    for (const auto& r : rs) w = std::max(w, r.gap);
    return w;
  };
  log << "centering identity: max gap " << worst(suite.centering) << " over " << suite.centering.size() << "\n";
  log << "scaling identity (1/sigma^2 form): max gap " << worst(suite.scaling) << " over "
      << suite.scaling.size() << "\n";

  bool ok = suite.all_pass();
  std::vector<NormalityReport> normality;
  std::uint64_t k = 0;
  for (auto I : th.normality_patch_sizes) {
    for (const auto& name : th.normality_distributions) {
      Rng rng(mix_seed(cfg.seed, k++, kNormality));
      auto r = check_output_normality(I, th.normality_samples, rng, parse_distribution(name), 1.0,
                                      cfg.model.epsilon);
      log << "normality I=" << I << " " << name << ": mean " << r.mean << " var " << r.variance
          << " excess_kurtosis " << r.excess_kurtosis
          << (r.bounds_checked ? (r.within_bounds ? " (within bounds)" : " (OUT OF BOUNDS)") : "") << "\n";
      if (r.bounds_checked && !r.within_bounds) ok = false;
      normality.push_back(r);
    }
  }
  write_text(out / "normality.json", normality_reports_json(normality));
  if (th.trace_steps > 0) dispatch<TraceCmd>(cfg, log);
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  prepare_run(cfg);
  return dispatch<TrainCmd>(cfg, log);
}

int cmd_eval(const RunConfig& cfg, std::ostream& log) {
  prepare_run(cfg);
  return dispatch<EvalCmd>(cfg, log);
}

int cmd_bench(const RunConfig& cfg, std::ostream& log) {
  prepare_run(cfg);
  return dispatch<BenchCmd>(cfg, log);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Normalized convolution toolkit", "ncconv"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  const std::pair<const char*, const char*> commands[] = {
      {"gradcheck", "finite-difference checks of every backward pass"},
      {"verify-theory", "gradient-norm identities, normality probe, optional trace"},
      {"train", "train a model and write metrics, summary and checkpoints"},
      {"eval", "evaluate a checkpoint on the test split"},
      {"bench", "time naive, im2col and normalized convolution"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_dir, "override the output directory");
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  if (!rev.empty()) rev.pop_back();  // program name
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitConfigError;
  }

  try {
    RunConfig cfg = load_config(config_path);
    if (seed) cfg.seed = cfg.gradcheck.seed = *seed;
    if (out_dir) cfg.out = *out_dir;
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gradcheck") return cmd_gradcheck(cfg, out);
    if (cmd == "verify-theory") return cmd_verify_theory(cfg, out);
    if (cmd == "train") return cmd_train(cfg, out);
    if (cmd == "eval") return cmd_eval(cfg, out);
    return cmd_bench(cfg, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const FormatError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const GeometryError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
}

}  // namespace ncconv::cli
