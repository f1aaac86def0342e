#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "ncconv/error.hpp"
#include "ncconv/theory.hpp"
#include "support/oracles.hpp"

namespace ncconv {
namespace {

double extra(const IdentityReport& r, const std::string& key) {
  for (const auto& [k, v] : r.extra)
    if (k == key) return v;
  ADD_FAILURE() << "missing extra " << key;
  return std::nan("");
}

double sq_norm(const std::vector<double>& v) {
  return std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
}

TEST(CenteringIdentity, ZeroMeanGradientPassesThroughUnchanged) {
  CenteringInstance c;
  c.x = {0.3, -1.2, 2.5, 0.0};
  c.grad_centered = {1.0, -2.0, 0.5, 0.5};
  const auto r = verify_centering_identity(c);
  EXPECT_NEAR(r.lhs, 5.5, 1e-12);
  EXPECT_NEAR(r.rhs, 5.5, 1e-12);
  EXPECT_TRUE(r.pass);
}

TEST(CenteringIdentity, ConstantGradientIsAnnihilated) {
  CenteringInstance c;
  c.x = {1.0, 2.0, 3.0, 4.0};
  c.grad_centered = {1.0, 1.0, 1.0, 1.0};
  const auto r = verify_centering_identity(c);
  EXPECT_NEAR(r.lhs, 0.0, 1e-24);
  EXPECT_NEAR(r.rhs, 0.0, 1e-24);  // 4 - 16/4
  EXPECT_TRUE(r.pass);
}

TEST(CenteringIdentity, RejectsLengthMismatch) {
  CenteringInstance c;
  c.x = {1.0, 2.0};
  c.grad_centered = {1.0};
  EXPECT_THROW(verify_centering_identity(c), DimensionError);
}

TEST(CenteringIdentity, NeverIncreasesTheNorm) {
  Rng rng(17);
  for (std::size_t i = 0; i < 200; ++i) {
    const auto c = random_centering_instance(1 + i % 30, rng);
    const auto r = verify_centering_identity(c);
    EXPECT_LE(r.lhs, sq_norm(c.grad_centered) * (1 + 1e-12));
    EXPECT_EQ(extra(r, "norm_reduction_nonnegative"), 1.0);
  }
}

TEST(ScalingIdentity, GradientOrthogonalToXhatScalesByInverseVariance) {
  ScalingInstance s;
  s.centered = {-3.0, -1.0, 1.0, 3.0};  // sigma = sqrt(5)
  s.grad_standardized = {1.0, -1.0, -1.0, 1.0};  // orthogonal to xhat
  const auto r = verify_scaling_identity(s);
  EXPECT_NEAR(extra(r, "sigma"), std::sqrt(5.0), 1e-14);
  EXPECT_NEAR(r.lhs, 4.0 / 5.0, 1e-13);
  EXPECT_NEAR(r.rhs, 4.0 / 5.0, 1e-13);
  EXPECT_TRUE(r.pass);
}

// With ||g|| = 1 along xhat and I = 4, <xhat,g>^2 = I, so the bracket is
// 1 + (1/16) * 4 * (4 - 8) = 0: the whole gradient is removed.
TEST(ScalingIdentity, UnitGradientAlongXhatIsAnnihilated) {
  ScalingInstance s;
  s.centered = {-3.0, -1.0, 1.0, 3.0};
  const double sigma = std::sqrt(5.0);
  for (double v : s.centered) s.grad_standardized.push_back(v / sigma / 2.0);
  ASSERT_NEAR(sq_norm(s.grad_standardized), 1.0, 1e-15);
  const auto r = verify_scaling_identity(s);
  EXPECT_NEAR(r.lhs, 0.0, 1e-15);
  EXPECT_NEAR(r.rhs, 0.0, 1e-15);
  EXPECT_NEAR(extra(r, "reduction_term"), -1.0, 1e-14);
  EXPECT_TRUE(r.pass);
}

TEST(ScalingIdentity, DegenerateColumnIsRejected) {
  ScalingInstance s;
  s.centered = {0.0, 0.0, 0.0};
  s.grad_standardized = {1.0, 2.0, 3.0};
  EXPECT_THROW(verify_scaling_identity(s), ConfigError);
  s.centered = {1e-14, -1e-14, 0.0};
  EXPECT_THROW(verify_scaling_identity(s), ConfigError);
}

TEST(ScalingIdentity, PrintedFirstPowerFormDivergesAwayFromUnitSigma) {
  const std::vector<double> base{-1.5, 0.25, 2.0, -0.75};
  double mean = 0.0;
  for (double v : base) mean += v / 4.0;
  double previous = -1.0;
  for (double scale : {1.0, 2.0, 4.0, 8.0}) {
    ScalingInstance s;
    for (double v : base) s.centered.push_back(scale * (v - mean));
    const double sigma = std::sqrt(sq_norm(s.centered) / 4.0);
    for (auto& v : s.centered) v /= sigma / scale;  // exact sigma = scale
    s.grad_standardized = {0.4, -1.1, 0.3, 0.9};
    const auto r = verify_scaling_identity(s);
    EXPECT_TRUE(r.pass);
    const double gap = extra(r, "printed_one_over_sigma_gap");
    if (scale == 1.0) {
      EXPECT_LT(gap, 1e-12);
    } else {
      EXPECT_GT(gap, previous);
      EXPECT_GT(gap, 1e-3);
    }
    previous = gap;
  }
}

TEST(IdentitySuite, HundredRandomInstancesPass) {
  const auto suite = run_identity_suite(100, {4, 9, 27}, 11, 1e-10);
  ASSERT_EQ(suite.centering.size(), 100u);
  ASSERT_EQ(suite.scaling.size(), 100u);
  EXPECT_TRUE(suite.all_pass());
  std::size_t printed_fail = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    const auto& s = suite.scaling[i];
    EXPECT_LE(s.gap, 1e-10) << s.instance;
    EXPECT_LE(extra(s, "reduction_term"), 0.0);
    EXPECT_LT(extra(s, "xhat_norm_rel_gap"), 1e-12);
    printed_fail += extra(s, "printed_one_over_sigma_gap") > 1e-10;
    EXPECT_NE(suite.centering[i].instance.find("index=" + std::to_string(i)), std::string::npos);
  }
  EXPECT_GT(printed_fail, 90u);
}

TEST(IdentitySuite, IsDeterministicAndSerializes) {
  const auto a = run_identity_suite(6, {4, 9}, 3);
  const auto b = run_identity_suite(6, {4, 9}, 3);
  const std::string ja = identity_reports_json(a);
  EXPECT_EQ(ja, identity_reports_json(b));
  const auto j = nlohmann::json::parse(ja);
  EXPECT_TRUE(j["all_pass"].get<bool>());
  ASSERT_EQ(j["scaling"].size(), 6u);
  EXPECT_TRUE(j["scaling"][0].contains("printed_one_over_sigma_gap"));
  EXPECT_EQ(j["centering"][1]["instance"], "seed=3 index=1 I=9");
}

TEST(IdentitySuite, EmptyPatchListIsAConfigError) {
  EXPECT_THROW(run_identity_suite(1, {}, 0), ConfigError);
}

TEST(Normality, ZeroWeightsGiveZeroVariance) {
  Rng rng(1);
  const auto r = check_output_normality(9, 500, rng, PatchDistribution::Gaussian, 0.0);
  EXPECT_EQ(r.mean, 0.0);
  EXPECT_EQ(r.variance, 0.0);
  EXPECT_FALSE(r.within_bounds);
}

TEST(Normality, StandardizedPatchesGiveUnitVarianceOutputs) {
  for (auto dist : {PatchDistribution::Gaussian, PatchDistribution::Uniform, PatchDistribution::HeavyTailed}) {
    Rng rng(mix_seed(6, static_cast<std::uint64_t>(dist), 0));
    const auto r = check_output_normality(27, 100000, rng, dist);
    EXPECT_TRUE(r.bounds_checked);
    EXPECT_LT(std::abs(r.mean), 0.013) << r.distribution;
    EXPECT_GE(r.variance, 0.9) << r.distribution;
    EXPECT_LE(r.variance, 1.1) << r.distribution;
    EXPECT_TRUE(r.within_bounds) << r.distribution;
    EXPECT_DOUBLE_EQ(r.mean_bound, 4.0 / std::sqrt(100000.0));
  }
}

TEST(Normality, SinglePixelPatchIsDegenerate) {
  Rng rng(2);
  const auto r = check_output_normality(1, 1000, rng, PatchDistribution::Gaussian);
  EXPECT_TRUE(r.degenerate);
  EXPECT_FALSE(r.bounds_checked);
  EXPECT_EQ(r.variance, 0.0);
}

TEST(Normality, SmallProbesAreNotBoundChecked) {
  Rng rng(3);
  EXPECT_FALSE(check_output_normality(9, 100000, rng, PatchDistribution::Gaussian).bounds_checked);
  EXPECT_FALSE(check_output_normality(27, 5000, rng, PatchDistribution::Gaussian).bounds_checked);
  EXPECT_THROW(check_output_normality(0, 10, rng, PatchDistribution::Gaussian), ConfigError);
}

TEST(Normality, ReportJsonCarriesEveryField) {
  Rng rng(4);
  const auto r = check_output_normality(4, 100, rng, PatchDistribution::HeavyTailed);
  const auto j = nlohmann::json::parse(normality_reports_json({r}));
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0]["distribution"], "student_t3");
  EXPECT_EQ(j[0]["patch_size"], 4u);
  EXPECT_TRUE(j[0].contains("excess_kurtosis"));
}

Dataset trace_data() {
  Rng rng(8);
  return synth_classification(8, 2, {3, 6, 6}, rng, true);
}

ModelSpec trace_spec(ConvKind kind) {
  ModelSpec spec;
  spec.input = {3, 6, 6};
  spec.layers = {ConvSpec{kind, 4, 3, 1, 1}, ActivationSpec{Activation::ReLU}, ConvSpec{kind, 4, 3, 2, 1},
                 ActivationSpec{Activation::ReLU}, LinearSpec{2}};
  return spec;
}

TEST(GradNormTrace, IdenticalModelsGiveIdenticalTraces) {
  const Dataset d = trace_data();
  Rng r1(5), r2(5);
  auto a = build_model<double>(trace_spec(ConvKind::Normalized), r1);
  auto b = build_model<double>(trace_spec(ConvKind::Normalized), r2);
  TrainConfig cfg;
  cfg.seed = 2;
  const auto rows = measure_grad_norm_reduction(a, "a", b, "b", d, cfg, 6);
  ASSERT_EQ(rows.size(), 6u * 2 * 2);
  for (std::size_t i = 0; i < rows.size(); i += 4) {
    for (std::size_t c = 0; c < 2; ++c) {
      const auto& ra = rows[i + c];
      const auto& rb = rows[i + 2 + c];
      EXPECT_EQ(ra.model, "a");
      EXPECT_EQ(rb.model, "b");
      EXPECT_EQ(ra.loss, rb.loss);
      EXPECT_EQ(ra.input_grad_norm, rb.input_grad_norm);
      EXPECT_EQ(ra.abs_loss_change, rb.abs_loss_change);
      EXPECT_TRUE(std::isfinite(ra.input_grad_norm));
    }
  }
}

TEST(GradNormTrace, ZeroLearningRateLeavesLossUnchanged) {
  const Dataset d = trace_data();
  Rng r1(6), r2(6);
  auto nc = build_model<double>(trace_spec(ConvKind::Normalized), r1);
  auto sc = build_model<double>(trace_spec(ConvKind::Standard), r2);
  TrainConfig cfg;
  cfg.lr = 0.0;
  const auto rows = measure_grad_norm_reduction(nc, "nc", sc, "standard", d, cfg, 5);
  ASSERT_FALSE(rows.empty());
  for (const auto& r : rows) EXPECT_EQ(r.abs_loss_change, 0.0) << r.model << " step " << r.step;
}

TEST(GradNormTrace, CsvHeaderAndRowCount) {
  const Dataset d = trace_data();
  Rng r1(7), r2(7);
  auto nc = build_model<float>(trace_spec(ConvKind::Normalized), r1);
  auto sc = build_model<float>(trace_spec(ConvKind::Standard), r2);
  TrainConfig cfg;
  const auto rows = measure_grad_norm_reduction(nc, "nc", sc, "standard", d, cfg, 3);
  testing::TempDir dir("trace");
  const auto file = dir.path() / "trace.csv";
  write_trace_csv(file, rows);
  std::ifstream in(file);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "model,step,loss,abs_loss_change,conv_index,input_grad_norm");
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, rows.size());
}

TEST(GradNormTrace, EmptyDatasetIsAConfigError) {
  Dataset d = trace_data();
  d = subset(d, 0, 0);
  Rng r1(1), r2(1);
  auto a = build_model<double>(trace_spec(ConvKind::Normalized), r1);
  auto b = build_model<double>(trace_spec(ConvKind::Normalized), r2);
  EXPECT_THROW(measure_grad_norm_reduction(a, "a", b, "b", d, TrainConfig{}, 1), ConfigError);
}

}  // namespace
}  // namespace ncconv
