#include "config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ncconv/error.hpp"

namespace ncconv::cli {

using nlohmann::json;

namespace {

// Reads typed fields from one JSON object and remembers which keys were consumed, so that
// anything left over can be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      check_kind<T>(*it);
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  template <typename F>
  void section(const char* key, F&& fill) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    Reader sub(*it, where(key));
    fill(sub);
    sub.finish();
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const std::string& key = {}) const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.contains(it.key())) throw ConfigError("unknown config key '" + where(it.key()) + "'");
  }

 private:
  // nlohmann converts between numeric kinds silently; reject negative or fractional values
  // for unsigned fields and non-numbers for doubles.
  template <typename T>
  static void check_kind(const json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw json::type_error::create(302, "expected a boolean", &v);
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw json::type_error::create(302, "expected a non-negative integer", &v);
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw json::type_error::create(302, "expected an integer", &v);
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw json::type_error::create(302, "expected a number", &v);
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

void validate(const RunConfig& c) {
  require(c.threads >= 1, "threads must be >= 1");
  require(c.dtype == "float32" || c.dtype == "float64", "dtype must be float32 or float64");
  require(!c.out.empty(), "out must not be empty");
  require(c.model.arch == "resnet8" || c.model.arch == "plain4", "model.arch must be resnet8 or plain4");
  parse_conv_kind(c.model.conv);
  parse_norm_kind(c.model.norm);
  parse_activation(c.model.activation);
  require(c.model.width > 0, "model.width must be positive");
  require(c.model.epsilon > 0.0, "model.epsilon must be positive");
  require(c.data.dataset == "cifar10" || c.data.dataset == "mnist" || c.data.dataset == "synthetic",
          "data.dataset must be cifar10, mnist or synthetic");
  const auto& s = c.data.synthetic;
  require(s.classes > 0, "data.synthetic.classes must be positive");
  require(!s.shape.empty() && s.shape.size() <= 3, "data.synthetic.shape must have 1 to 3 extents");
  c.train.params.validate();
  require(c.eval.batch_size > 0, "eval.batch_size must be positive");
  require(c.gradcheck.configs > 0, "gradcheck.configs must be positive");
  require(c.gradcheck.step > 0.0, "gradcheck.step must be positive");
  require(c.theory.instances > 0, "theory.instances must be positive");
  for (auto i : c.theory.patch_sizes) require(i >= 2, "theory.patch_sizes entries must be >= 2");
  for (auto i : c.theory.normality_patch_sizes) require(i >= 1, "theory.normality_patch_sizes entries must be >= 1");
  for (const auto& d : c.theory.normality_distributions)
    require(d == "gaussian" || d == "uniform" || d == "heavy_tailed",
            "theory.normality_distributions entries must be gaussian, uniform or heavy_tailed");
  require(c.theory.trace_arch == "resnet8" || c.theory.trace_arch == "plain4",
          "theory.trace_arch must be resnet8 or plain4");
  require(c.bench.repeats > 0, "bench.repeats must be positive");
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  Reader r(root, "");
  r.get("seed", c.seed);
  r.get("threads", c.threads);
  r.get("deterministic", c.deterministic);
  r.get("dtype", c.dtype);
  r.get("out", c.out);
  r.section("model", [&](Reader& m) {
    m.get("arch", c.model.arch);
    m.get("conv", c.model.conv);
    m.get("norm", c.model.norm);
    m.get("activation", c.model.activation);
    m.get("width", c.model.width);
    m.get("groups", c.model.groups);
    m.get("epsilon", c.model.epsilon);
  });
  r.section("data", [&](Reader& d) {
    d.get("dataset", c.data.dataset);
    d.get("dir", c.data.dir);
    d.get("normalize", c.data.normalize);
    d.get("train_per_class", c.data.train_per_class);
    d.get("test_per_class", c.data.test_per_class);
    d.section("synthetic", [&](Reader& s) {
      s.get("train", c.data.synthetic.train);
      s.get("test", c.data.synthetic.test);
      s.get("classes", c.data.synthetic.classes);
      s.get("shape", c.data.synthetic.shape);
      s.get("separable", c.data.synthetic.separable);
    });
  });
  r.section("train", [&](Reader& t) {
    auto& p = c.train.params;
    t.get("batch_size", p.batch_size);
    t.get("lr", p.lr);
    t.get("lr_decay_factor", p.lr_decay_factor);
    t.get("lr_decay_every", p.lr_decay_every);
    t.get("epochs", p.epochs);
    t.get("momentum", p.momentum);
    t.get("weight_decay", p.weight_decay);
    t.get("hflip", p.hflip);
    t.get("shift_frac", p.shift_frac);
    t.get("eval_batch_size", p.eval_batch_size);
    t.get("shuffle", p.shuffle);
    t.get("resume_from", c.train.resume_from);
    t.get("save_checkpoints", c.train.save_checkpoints);
  });
  r.section("eval", [&](Reader& e) {
    e.get("checkpoint", c.eval.checkpoint);
    e.get("batch_size", c.eval.batch_size);
  });
  r.section("gradcheck", [&](Reader& g) {
    g.get("configs", c.gradcheck.configs);
    g.get("step", c.gradcheck.step);
    g.get("tolerance", c.gradcheck.tolerance);
    g.get("activation_tolerance", c.gradcheck.activation_tolerance);
    g.get("perturb_analytic", c.gradcheck.perturb_analytic);
  });
  r.section("theory", [&](Reader& t) {
    t.get("instances", c.theory.instances);
    t.get("patch_sizes", c.theory.patch_sizes);
    t.get("tolerance", c.theory.tolerance);
    t.get("normality_patch_sizes", c.theory.normality_patch_sizes);
    t.get("normality_samples", c.theory.normality_samples);
    t.get("normality_distributions", c.theory.normality_distributions);
    t.get("trace_steps", c.theory.trace_steps);
    t.get("trace_arch", c.theory.trace_arch);
    t.get("trace_width", c.theory.trace_width);
  });
  r.section("bench", [&](Reader& b) {
    b.get("repeats", c.bench.repeats);
    if (const json* geos = b.raw("geometries")) {
      require(geos->is_array(), "bench.geometries must be an array");
      c.bench.geometries.clear();
      for (std::size_t i = 0; i < geos->size(); ++i) {
        Reader g((*geos)[i], "bench.geometries[" + std::to_string(i) + "]");
        BenchGeometry bg;
        g.get("batch", bg.batch);
        g.get("in_channels", bg.in_channels);
        g.get("out_channels", bg.out_channels);
        g.get("kernel", bg.kernel);
        g.get("stride", bg.stride);
        g.get("padding", bg.padding);
        g.get("height", bg.height);
        g.get("width", bg.width);
        g.finish();
        c.bench.geometries.push_back(bg);
      }
    }
  });
  r.finish();
  c.gradcheck.seed = c.seed;
  validate(c);
  return c;
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_json(const RunConfig& c) {
  json geos = json::array();
  for (const auto& g : c.bench.geometries)
    geos.push_back({{"batch", g.batch}, {"in_channels", g.in_channels}, {"out_channels", g.out_channels},
                    {"kernel", g.kernel}, {"stride", g.stride}, {"padding", g.padding},
                    {"height", g.height}, {"width", g.width}});
  const auto& p = c.train.params;
  json j = {
      {"seed", c.seed},
      {"threads", c.threads},
      {"deterministic", c.deterministic},
      {"dtype", c.dtype},
      {"out", c.out},
      {"model",
       {{"arch", c.model.arch}, {"conv", c.model.conv}, {"norm", c.model.norm},
        {"activation", c.model.activation}, {"width", c.model.width}, {"groups", c.model.groups},
        {"epsilon", c.model.epsilon}}},
      {"data",
       {{"dataset", c.data.dataset}, {"dir", c.data.dir}, {"normalize", c.data.normalize},
        {"train_per_class", c.data.train_per_class}, {"test_per_class", c.data.test_per_class},
        {"synthetic",
         {{"train", c.data.synthetic.train}, {"test", c.data.synthetic.test},
          {"classes", c.data.synthetic.classes}, {"shape", c.data.synthetic.shape},
          {"separable", c.data.synthetic.separable}}}}},
      {"train",
       {{"batch_size", p.batch_size}, {"lr", p.lr}, {"lr_decay_factor", p.lr_decay_factor},
        {"lr_decay_every", p.lr_decay_every}, {"epochs", p.epochs}, {"momentum", p.momentum},
        {"weight_decay", p.weight_decay}, {"hflip", p.hflip}, {"shift_frac", p.shift_frac},
        {"eval_batch_size", p.eval_batch_size}, {"shuffle", p.shuffle},
        {"resume_from", c.train.resume_from}, {"save_checkpoints", c.train.save_checkpoints}}},
      {"eval", {{"checkpoint", c.eval.checkpoint}, {"batch_size", c.eval.batch_size}}},
      {"gradcheck",
       {{"configs", c.gradcheck.configs}, {"step", c.gradcheck.step},
        {"tolerance", c.gradcheck.tolerance},
        {"activation_tolerance", c.gradcheck.activation_tolerance},
        {"perturb_analytic", c.gradcheck.perturb_analytic}}},
      {"theory",
       {{"instances", c.theory.instances}, {"patch_sizes", c.theory.patch_sizes},
        {"tolerance", c.theory.tolerance}, {"normality_patch_sizes", c.theory.normality_patch_sizes},
        {"normality_samples", c.theory.normality_samples},
        {"normality_distributions", c.theory.normality_distributions},
        {"trace_steps", c.theory.trace_steps}, {"trace_arch", c.theory.trace_arch},
        {"trace_width", c.theory.trace_width}}},
      {"bench", {{"repeats", c.bench.repeats}, {"geometries", geos}}},
  };
  return j.dump(2) + "\n";
}

}  // namespace ncconv::cli
