#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ncconv/gradcheck.hpp"
#include "ncconv/model_spec.hpp"
#include "ncconv/train.hpp"

namespace ncconv::cli {

struct ModelConfig {
  std::string arch = "resnet8";  // resnet8 | plain4
  std::string conv = "nc";       // nc | standard
  std::string norm = "none";     // none | gn
  std::string activation = "relu";
  std::size_t width = 16;
  std::size_t groups = 0;  // 0 picks the default group count per layer
  double epsilon = 1e-5;
};

struct SyntheticConfig {
  std::size_t train = 200;
  std::size_t test = 100;
  std::size_t classes = 10;
  std::vector<std::size_t> shape{3, 32, 32};
  bool separable = true;
};

struct DataConfig {
  std::string dataset = "cifar10";  // cifar10 | mnist | synthetic
  std::string dir;                  // empty: $NCCONV_DATA_DIR
  bool normalize = true;
  std::size_t train_per_class = 0;  // 0 keeps the whole split
  std::size_t test_per_class = 0;
  SyntheticConfig synthetic;
};

struct TrainSection {
  TrainConfig params;
  std::string resume_from;
  bool save_checkpoints = true;
};

struct EvalSection {
  std::string checkpoint;
  std::size_t batch_size = 100;
};

struct TheorySection {
  std::size_t instances = 100;
  std::vector<std::size_t> patch_sizes{4, 9, 27};
  double tolerance = 1e-10;
  std::vector<std::size_t> normality_patch_sizes{27};
  std::size_t normality_samples = 100000;
  std::vector<std::string> normality_distributions{"gaussian", "uniform", "heavy_tailed"};
  std::size_t trace_steps = 0;  // 0 skips the NC vs standard-conv trace
  std::string trace_arch = "plain4";
  std::size_t trace_width = 16;
};

struct BenchGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 16;
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  std::size_t height = 32;
  std::size_t width = 32;
};

struct BenchSection {
  std::size_t repeats = 5;
  std::vector<BenchGeometry> geometries{{1, 3, 16, 3, 1, 1, 32, 32},
                                        {1, 16, 32, 3, 2, 1, 32, 32},
                                        {1, 32, 64, 3, 2, 1, 16, 16}};
};

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  bool deterministic = true;
  std::string dtype = "float32";  // float32 | float64
  std::string out = "runs/ncconv";
  ModelConfig model;
  DataConfig data;
  TrainSection train;
  EvalSection eval;
  GradcheckOptions gradcheck;
  TheorySection theory;
  BenchSection bench;
};

// Strict parse: unknown keys, wrong types and invalid values throw ConfigError.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& file);
// Every field, defaults included.
std::string to_json(const RunConfig& cfg);

}  // namespace ncconv::cli
