#include <gtest/gtest.h>

#include "ncconv/error.hpp"
#include "ncconv/im2col.hpp"
#include "support/oracles.hpp"

namespace ncconv {
namespace {

using Td = Tensor<double>;

ConvGeometry geom(std::size_t c, std::size_t h, std::size_t w, std::size_t k, std::size_t s,
                  std::size_t p, std::size_t kw = 0) {
  ConvGeometry g;
  g.in_channels = c;
  g.out_channels = 1;
  g.kernel_h = k;
  g.kernel_w = kw ? kw : k;
  g.stride_h = g.stride_w = s;
  g.pad_h = g.pad_w = p;
  g.in_h = h;
  g.in_w = w;
  return g;
}

TEST(ConvGeometry, DerivedExtents) {
  const auto g = geom(3, 32, 32, 3, 2, 1);
  EXPECT_EQ(g.patch_size(), 27u);
  EXPECT_EQ(g.out_h(), 16u);
  EXPECT_EQ(g.out_w(), 16u);
  EXPECT_EQ(g.columns(), 256u);
  EXPECT_EQ(geom(1, 5, 5, 3, 1, 0).out_h(), 3u);
}

TEST(ConvGeometry, KernelLargerThanPaddedInputIsRejected) {
  const auto g = geom(1, 2, 2, 5, 1, 1);
  EXPECT_EQ(g.out_h(), 0u);
  EXPECT_THROW(g.validate(), GeometryError);
  EXPECT_THROW(unfold(Td({1, 1, 2, 2}), g), GeometryError);
  EXPECT_THROW(geom(0, 4, 4, 1, 1, 0).validate(), GeometryError);
  EXPECT_THROW(geom(1, 4, 4, 1, 0, 0).validate(), GeometryError);
}

TEST(Unfold, SingleTwoByTwoPatch) {
  const Td x({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto m = unfold(x, geom(1, 2, 2, 2, 1, 0));
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].data.shape(), (Shape{4, 1}));
  EXPECT_EQ(m[0].data.values(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Unfold, OneByOneKernelIsChannelReshape) {
  const Td x = testing::gaussian({2, 3, 4, 5}, 1);
  const auto m = unfold(x, geom(3, 4, 5, 1, 1, 0));
  for (std::size_t s = 0; s < 2; ++s) {
    EXPECT_EQ(m[s].data.shape(), (Shape{3, 20}));
    const auto sample = x.slice(s);
    EXPECT_TRUE(std::equal(sample.begin(), sample.end(), m[s].data.data().begin()));
  }
}

TEST(Unfold, AllZeroInput) {
  const auto m = unfold(Td({1, 2, 5, 5}), geom(2, 5, 5, 3, 2, 1));
  for (double v : m[0].data.data()) EXPECT_EQ(v, 0.0);
}

TEST(Unfold, ColumnsMatchDirectPatchGather) {
  const std::vector<ConvGeometry> gs = {geom(2, 5, 6, 3, 1, 1), geom(3, 7, 5, 3, 2, 0),
                                        geom(1, 4, 4, 2, 2, 1), geom(2, 6, 6, 1, 2, 1),
                                        geom(2, 5, 7, 3, 2, 1, 2)};
  for (const auto& g : gs) {
    const Td x = testing::gaussian({2, g.in_channels, g.in_h, g.in_w}, 21);
    const auto m = unfold(x, g);
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t i = 0; i < g.out_h(); ++i)
        for (std::size_t j = 0; j < g.out_w(); ++j) {
          const auto p = testing::naive_patch(x, s, g, i, j);
          const std::size_t k = i * g.out_w() + j;
          for (std::size_t r = 0; r < p.size(); ++r) ASSERT_EQ(m[s].data.at(r, k), p[r]) << g.describe();
        }
  }
}

TEST(Unfold, ShapeMismatchThrows) {
  EXPECT_THROW(unfold(Td({1, 2, 4, 4}), geom(3, 4, 4, 1, 1, 0)), DimensionError);
}

TEST(Fold, NonOverlappingRoundTrip) {
  const auto g = geom(2, 6, 4, 2, 2, 0);
  const Td x = testing::gaussian({1, 2, 6, 4}, 4);
  const auto m = unfold(x, g);
  EXPECT_EQ(fold(m[0], g).values(), std::vector<double>(x.data().begin(), x.data().end()));
}

TEST(Fold, OneByOneIsReshapeInverse) {
  const auto g = geom(1, 2, 2, 1, 1, 0);
  const Td x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Td back = fold(unfold(x, g)[0], g);
  EXPECT_EQ(back.shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(back.values(), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Fold, OverlapCountingOnARow) {
  const auto g = geom(1, 1, 3, 1, 1, 0, 2);
  const double a = 1.5, b = -2.0, c = 4.0;
  const Td back = fold(unfold(Td({1, 1, 1, 3}, {a, b, c}), g)[0], g);
  EXPECT_EQ(back.values(), (std::vector<double>{a, 2 * b, c}));
}

TEST(Fold, WrongShapeThrows) {
  const auto g = geom(1, 4, 4, 3, 1, 0);
  Im2ColMatrix<double> m{Td({8, 4}), g};
  EXPECT_THROW(fold(m, g), DimensionError);
}

// <unfold(x), u> == <x, fold(u)>: the defining property of the pair.
TEST(Fold, IsTheAdjointOfUnfold) {
  for (std::size_t t = 0; t < 40; ++t) {
    const std::size_t k = 1 + 2 * (t % 2), s = 1 + (t / 2) % 2, p = (t / 4) % 2;
    const auto g = geom(1 + t % 3, 4 + t % 4, 3 + t % 5, k, s, p);
    const Td x = testing::gaussian({1, g.in_channels, g.in_h, g.in_w}, 100 + t);
    const Td u = testing::gaussian({g.patch_size(), g.columns()}, 200 + t);
    const auto m = unfold(x, g);
    const double lhs = dot<double>(m[0].data.data(), u.data());
    const double rhs = dot<double>(x.data(), fold(Im2ColMatrix<double>{u, g}, g).data());
    EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs))) << g.describe();
  }
}

TEST(Fold, UnfoldThenFoldIsPatchCountScaling) {
  for (const auto& g : {geom(2, 5, 5, 3, 1, 1), geom(1, 7, 6, 3, 2, 0), geom(3, 4, 4, 2, 1, 1)}) {
    const Td x = testing::gaussian({1, g.in_channels, g.in_h, g.in_w}, 3);
    const Td back = fold(unfold(x, g)[0], g);
    const Tensor<double> count = patch_count_map(g);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(back[i], count[i] * x[i], 1e-12);
  }
}

TEST(Fold, PatchCountMapHandValues) {
  // 3-wide row, kernel 1x2 stride 1: pixels covered 1, 2, 1 times.
  EXPECT_EQ(patch_count_map(geom(1, 1, 3, 1, 1, 0, 2)).values(), (std::vector<double>{1, 2, 1}));
}

}  // namespace
}  // namespace ncconv
