#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cli/commands.hpp"
#include "ncconv/data.hpp"
#include "support/oracles.hpp"

namespace ncconv::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Result {
  int code = -1;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "ncconv");
  std::ostringstream out, err;
  Result r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path write_config(const fs::path& dir, const json& j, const std::string& name = "config.json") {
  const auto file = dir / name;
  std::ofstream(file) << j.dump(2);
  return file;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const fs::path& file) {
  std::ifstream in(file);
  std::vector<std::string> v;
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> v;
  std::stringstream s(line);
  for (std::string f; std::getline(s, f, ',');) v.push_back(f);
  return v;
}

// Tiny synthetic training run: plain 4-layer CNN at width 4 on 3x8x8 images.
json small_train(const fs::path& out, std::size_t epochs = 2) {
  return {{"out", out.string()},
          {"seed", 7},
          {"model", {{"arch", "plain4"}, {"width", 4}}},
          {"data",
           {{"dataset", "synthetic"},
            {"synthetic", {{"train", 24}, {"test", 12}, {"classes", 4}, {"shape", {3, 8, 8}}}}}},
          {"train", {{"epochs", epochs}, {"hflip", true}, {"shift_frac", 0.25}}}};
}

TEST(CliConfig, UnknownNestedKeyIsAConfigError) {
  testing::TempDir dir("cli-cfg");
  json j = small_train(dir / "run");
  j["train"]["lrr"] = 0.1;
  const auto r = run({"train", "--config", write_config(dir.path(), j).string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("train.lrr"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST(CliConfig, WrongTypesAndMissingFilesAreConfigErrors) {
  testing::TempDir dir("cli-type");
  EXPECT_EQ(run({"gradcheck", "--config", write_config(dir.path(), {{"seed", "seven"}}).string()}).code, 2);
  EXPECT_EQ(run({"gradcheck", "--config", write_config(dir.path(), {{"threads", -1}}).string()}).code, 2);
  EXPECT_EQ(run({"gradcheck", "--config", write_config(dir.path(), {{"deterministic", 1}}).string()}).code, 2);
  EXPECT_EQ(run({"gradcheck", "--config", write_config(dir.path(), {{"dtype", "float16"}}).string()}).code, 2);
  EXPECT_EQ(run({"gradcheck", "--config", (dir / "absent.json").string()}).code, 2);
  std::ofstream(dir / "broken.json") << "{\"seed\": ";
  EXPECT_EQ(run({"gradcheck", "--config", (dir / "broken.json").string()}).code, 2);
}

TEST(CliConfig, UsageErrors) {
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate", "--config", "x.json"}).code, 2);
  EXPECT_EQ(run({"train"}).code, 2);
  const auto help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("verify-theory"), std::string::npos);
}

TEST(CliGradcheck, DefaultSuitePassesAndPerturbationFails) {
  testing::TempDir dir("cli-gc");
  const auto ok = run({"gradcheck", "--config",
                       write_config(dir.path(), {{"out", (dir / "ok").string()}}).string()});
  EXPECT_EQ(ok.code, 0) << ok.out << ok.err;
  EXPECT_NE(ok.out.find("max_rel_err"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "ok" / kResolvedConfigName));

  const json bad{{"out", (dir / "bad").string()}, {"gradcheck", {{"perturb_analytic", true}}}};
  const auto fail = run({"gradcheck", "--config", write_config(dir.path(), bad).string()});
  EXPECT_EQ(fail.code, 1) << fail.out;
}

TEST(CliTrain, DeterministicRunsAreByteIdenticalAndRerunFromResolvedConfig) {
  testing::TempDir dir("cli-det");
  const auto cfg = write_config(dir.path(), small_train(dir / "a"));
  ASSERT_EQ(run({"train", "--config", cfg.string()}).code, 0);
  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "b").string()}).code, 0);
  const auto a = slurp(dir / "a" / "metrics.csv");
  EXPECT_EQ(lines(dir / "a" / "metrics.csv").size(), 3u);
  EXPECT_EQ(a, slurp(dir / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "a" / "steps.csv"), slurp(dir / "b" / "steps.csv"));

  const auto resolved = dir / "a" / kResolvedConfigName;
  ASSERT_EQ(run({"train", "--config", resolved.string(), "--out", (dir / "c").string()}).code, 0);
  EXPECT_EQ(a, slurp(dir / "c" / "metrics.csv"));

  ASSERT_EQ(run({"train", "--config", cfg.string(), "--out", (dir / "d").string(), "--seed", "8"}).code, 0);
  EXPECT_NE(a, slurp(dir / "d" / "metrics.csv"));
}

TEST(CliTrain, WritesSummaryAndPerEpochCheckpoints) {
  testing::TempDir dir("cli-out");
  ASSERT_EQ(run({"train", "--config", write_config(dir.path(), small_train(dir / "run", 3)).string()}).code, 0);
  for (const char* f : {"checkpoints/epoch_001.ncck", "checkpoints/epoch_002.ncck",
                        "checkpoints/epoch_003.ncck", "last.ncck", "summary.json", "steps.csv"})
    EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;
  const auto s = json::parse(slurp(dir / "run" / "summary.json"));
  EXPECT_TRUE(s["all_finite"].get<bool>());
  EXPECT_EQ(s["history"].size(), 3u);
  EXPECT_EQ(s["steps"], 36u);  // 24 samples / batch 2 * 3 epochs
  const auto& f = s["final"];
  EXPECT_DOUBLE_EQ(f["val_top1_err"].get<double>(), 1.0 - f["val_top1_acc"].get<double>());
  EXPECT_EQ(lines(dir / "run" / "steps.csv").size(), 37u);
}

TEST(CliTrain, SummaryRecordsResolvedGroupCounts) {
  testing::TempDir dir("cli-gn");
  json j = small_train(dir / "run", 1);
  j["model"]["conv"] = "standard";
  j["model"]["norm"] = "groupnorm";
  j["model"]["width"] = 12;
  ASSERT_EQ(run({"train", "--config", write_config(dir.path(), j).string()}).code, 0);
  const auto s = json::parse(slurp(dir / "run" / "summary.json"));
  // widths 12, 24, 48, 48: 32 divides none of them, so the largest divisor <= 32
  EXPECT_EQ(s["group_norm_groups"], json({12, 24, 24, 24}));
}

TEST(CliTrain, ResumeContinuesTheUninterruptedRun) {
  testing::TempDir dir("cli-resume");
  ASSERT_EQ(run({"train", "--config", write_config(dir.path(), small_train(dir / "full", 4), "full.json").string()}).code, 0);
  ASSERT_EQ(run({"train", "--config", write_config(dir.path(), small_train(dir / "part", 2), "part.json").string()}).code, 0);
  json resumed = small_train(dir / "part", 4);
  resumed["train"]["resume_from"] = (dir / "part" / "last.ncck").string();
  ASSERT_EQ(run({"train", "--config", write_config(dir.path(), resumed, "resume.json").string()}).code, 0);

  const auto full = lines(dir / "full" / "metrics.csv");
  const auto part = lines(dir / "part" / "metrics.csv");
  ASSERT_EQ(full.size(), 5u);
  ASSERT_EQ(part.size(), 5u);
  for (std::size_t i = 1; i < full.size(); ++i) {
    const auto a = fields(full[i]), b = fields(part[i]);
    ASSERT_EQ(a.size(), b.size());
    EXPECT_EQ(a[0], b[0]);  // schema tag
    for (std::size_t k = 1; k < a.size(); ++k) {
      const double x = std::stod(a[k]), y = std::stod(b[k]);
      EXPECT_NEAR(x, y, 1e-6 * std::max(1.0, std::abs(x))) << "row " << i << " column " << k;
    }
  }
}

TEST(CliTrain, ZeroLearningRateGivesAFlatLossCurve) {
  testing::TempDir dir("cli-lr0");
  json j = small_train(dir / "run", 3);
  j["train"]["lr"] = 0.0;
  j["train"]["hflip"] = false;
  j["train"]["shift_frac"] = 0.0;
  ASSERT_EQ(run({"train", "--config", write_config(dir.path(), j).string()}).code, 0);
  const auto rows = lines(dir / "run" / "metrics.csv");
  ASSERT_EQ(rows.size(), 4u);
  const auto head = fields(rows[0]);
  const auto col = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(head.begin(), head.end(), name) - head.begin());
  };
  const auto first = fields(rows[1]);
  for (std::size_t i = 2; i < rows.size(); ++i) {
    const auto r = fields(rows[i]);
    // Shuffled order changes only the summation order of the epoch mean.
    EXPECT_NEAR(std::stod(r[col("train_loss")]), std::stod(first[col("train_loss")]), 1e-6);
    EXPECT_EQ(r[col("val_loss")], first[col("val_loss")]);
  }
}

TEST(CliTrain, MissingDatasetIsAConfigError) {
  testing::TempDir dir("cli-nodata");
  json j = small_train(dir / "run");
  j["data"] = {{"dataset", "cifar10"}, {"dir", (dir / "nowhere").string()}};
  EXPECT_EQ(run({"train", "--config", write_config(dir.path(), j).string()}).code, 2);

  const char* saved = std::getenv(kDataDirEnv);
  const std::string keep = saved ? saved : "";
  ::unsetenv(kDataDirEnv);
  j["data"] = {{"dataset", "cifar10"}};
  const auto r = run({"train", "--config", write_config(dir.path(), j).string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find(kDataDirEnv), std::string::npos) << r.err;
  if (saved) ::setenv(kDataDirEnv, keep.c_str(), 1);
}

TEST(CliEval, ReportsAccuracyAndErrorForACheckpoint) {
  testing::TempDir dir("cli-eval");
  const json t = small_train(dir / "run", 1);
  ASSERT_EQ(run({"train", "--config", write_config(dir.path(), t).string()}).code, 0);
  json e = t;
  e["out"] = (dir / "eval").string();
  e["eval"] = {{"checkpoint", (dir / "run" / "last.ncck").string()}};
  const auto r = run({"eval", "--config", write_config(dir.path(), e, "eval.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(slurp(dir / "eval" / "eval.json"));
  EXPECT_EQ(j["samples"], 12u);
  EXPECT_DOUBLE_EQ(j["top1_err"].get<double>(), 1.0 - j["top1_acc"].get<double>());
  EXPECT_DOUBLE_EQ(j["top5_err"].get<double>(), 1.0 - j["top5_acc"].get<double>());
  EXPECT_DOUBLE_EQ(j["top5_acc"].get<double>(), 1.0);  // four classes

  const auto summary = json::parse(slurp(dir / "run" / "summary.json"));
  EXPECT_DOUBLE_EQ(j["loss"].get<double>(), summary["final"]["val_loss"].get<double>());

  e["eval"]["checkpoint"] = (dir / "missing.ncck").string();
  EXPECT_EQ(run({"eval", "--config", write_config(dir.path(), e, "eval2.json").string()}).code, 2);
  e["dtype"] = "float64";
  e["eval"]["checkpoint"] = (dir / "run" / "last.ncck").string();
  EXPECT_EQ(run({"eval", "--config", write_config(dir.path(), e, "eval3.json").string()}).code, 2);
}

TEST(CliBench, SmokeRunWritesTimingRows) {
  testing::TempDir dir("cli-bench");
  const json j{{"out", (dir / "run").string()},
               {"bench",
                {{"repeats", 1},
                 {"geometries",
                  {{{"batch", 2}, {"in_channels", 3}, {"out_channels", 4}, {"kernel", 1}, {"stride", 1},
                    {"padding", 0}, {"height", 6}, {"width", 6}}}}}}};
  ASSERT_EQ(run({"bench", "--config", write_config(dir.path(), j).string()}).code, 0);
  const auto rows = lines(dir / "run" / "bench.csv");
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0],
            "geometry,batch,in_channels,out_channels,kernel,stride,padding,height,width,dtype,method,"
            "repeats,median_ms,ms_per_image");
  EXPECT_NE(rows[1].find(",naive,"), std::string::npos);
  EXPECT_NE(rows[2].find(",im2col_gemm,"), std::string::npos);
  EXPECT_NE(rows[3].find(",nc_forward,"), std::string::npos);
}

TEST(CliBench, ZeroSizeGeometryIsRejected) {
  testing::TempDir dir("cli-bench0");
  json j{{"out", (dir / "run").string()},
         {"bench",
          {{"repeats", 1},
           {"geometries",
            {{{"batch", 1}, {"in_channels", 0}, {"out_channels", 4}, {"kernel", 3}, {"stride", 1},
              {"padding", 1}, {"height", 6}, {"width", 6}}}}}}};
  EXPECT_EQ(run({"bench", "--config", write_config(dir.path(), j).string()}).code, 2);
  j["bench"]["geometries"][0]["in_channels"] = 3;
  j["bench"]["geometries"][0]["height"] = 2;
  j["bench"]["geometries"][0]["padding"] = 0;
  EXPECT_EQ(run({"bench", "--config", write_config(dir.path(), j).string()}).code, 2);
  EXPECT_FALSE(fs::exists(dir / "run" / "bench.csv"));
}

TEST(CliVerifyTheory, WritesIdentityNormalityAndTraceOutputs) {
  testing::TempDir dir("cli-theory");
  const json j{{"out", (dir / "run").string()},
               {"data",
                {{"dataset", "synthetic"},
                 {"synthetic", {{"train", 16}, {"test", 4}, {"classes", 2}, {"shape", {3, 8, 8}}}}}},
               {"theory",
                {{"instances", 12},
                 {"normality_samples", 20000},
                 {"trace_steps", 3},
                 {"trace_width", 4}}}};
  const auto r = run({"verify-theory", "--config", write_config(dir.path(), j).string()});
  ASSERT_EQ(r.code, 0) << r.out << r.err;
  const auto ids = json::parse(slurp(dir / "run" / "identities.json"));
  EXPECT_TRUE(ids["all_pass"].get<bool>());
  EXPECT_EQ(ids["scaling"].size(), 12u);
  const auto norm = json::parse(slurp(dir / "run" / "normality.json"));
  EXPECT_EQ(norm.size(), 3u);
  for (const auto& n : norm) EXPECT_TRUE(n["within_bounds"].get<bool>()) << n.dump();
  const auto trace = lines(dir / "run" / "trace.csv");
  EXPECT_EQ(trace[0], "model,step,loss,abs_loss_change,conv_index,input_grad_norm");
  EXPECT_EQ(trace.size(), 1u + 3 * 2 * 4);  // steps x models x conv layers
}

// Six CIFAR-10 binaries in the real layout and at the real size (10000 records each).
class CifarFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("cifar");
    Rng rng(99);
    for (int f = 0; f < 6; ++f) {
      Dataset d;
      d.images = Tensor<float>({kCifarRecordsPerFile, 3, 32, 32});
      for (auto& v : d.images.data()) v = static_cast<float>(rng.uniform_index(256)) / 255.0f;
      for (std::size_t i = 0; i < kCifarRecordsPerFile; ++i) d.labels.push_back(static_cast<int>(i % 10));
      d.class_count = 10;
      write_cifar10_file(dir_->path() / (f < 5 ? "data_batch_" + std::to_string(f + 1) + ".bin"
                                               : std::string("test_batch.bin")),
                         d);
    }
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static testing::TempDir* dir_;
};
testing::TempDir* CifarFixture::dir_ = nullptr;

TEST_F(CifarFixture, FullSizeLayoutLoadsFiftyThousandAndTenThousand) {
  const auto split = load_cifar10(dir_->path());
  EXPECT_EQ(split.train.size(), 50000u);
  EXPECT_EQ(split.test.size(), 10000u);
  EXPECT_EQ(split.train.sample_shape(), (Shape{3, 32, 32}));
  EXPECT_EQ(split.train.class_count, 10u);
}

TEST_F(CifarFixture, TrainSmokeThroughDataDir) {
  testing::TempDir out("cifar-run");
  const json j{{"out", out.path().string()},
               {"model", {{"arch", "plain4"}, {"width", 4}}},
               {"data", {{"dir", dir_->path().string()}, {"train_per_class", 2}, {"test_per_class", 1}}},
               {"train", {{"epochs", 1}}}};
  const auto r = run({"train", "--config", write_config(out.path(), j).string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = json::parse(slurp(out / "summary.json"));
  EXPECT_EQ(s["train_samples"], 20u);
  EXPECT_EQ(s["test_samples"], 10u);
  EXPECT_EQ(s["steps"], 10u);
}

}  // namespace
}  // namespace ncconv::cli
