#include <gtest/gtest.h>

#include "colanet/patch.hpp"
#include "colanet/rng.hpp"
#include "test_util.hpp"

using namespace colanet;
using colanet::testing::random_tensor;

namespace {

Tensor iota_map(std::size_t c, std::size_t h, std::size_t w) {
  Tensor t(Shape{1, c, h, w});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<real>(i + 1);
  return t;
}

std::vector<real> row_of(const Tensor& patches, std::size_t p) {
  const std::size_t len = patches.dim(1);
  return {patches.ptr() + p * len, patches.ptr() + (p + 1) * len};
}

}  // namespace

TEST(Unfold, WholeImagePatchIsFlattenedInput) {
  const Tensor x = random_tensor({1, 2, 5, 3}, 1);
  for (std::size_t stride : {1u, 2u, 7u}) {
    const PatchSet s = unfold(x, PatchGeometry{2, 5, 3, 5, 3, stride});
    ASSERT_EQ(s.patches.shape(), (Shape{1, 30}));
    for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(s.patches[i], x[i]);
  }
}

TEST(Unfold, FourByFourPatchTwoStrideTwo) {
  const PatchSet s = unfold(iota_map(1, 4, 4), PatchGeometry{1, 4, 4, 2, 2, 2});
  ASSERT_EQ(s.patches.shape(), (Shape{4, 4}));
  EXPECT_EQ(row_of(s.patches, 0), (std::vector<real>{1, 2, 5, 6}));
  EXPECT_EQ(row_of(s.patches, 1), (std::vector<real>{3, 4, 7, 8}));
  EXPECT_EQ(row_of(s.patches, 2), (std::vector<real>{9, 10, 13, 14}));
  EXPECT_EQ(row_of(s.patches, 3), (std::vector<real>{11, 12, 15, 16}));
}

TEST(Unfold, GridCount) {
  const PatchGeometry g{3, 6, 6, 3, 3, 1};
  EXPECT_EQ(g.num_patches(), 16u);
  EXPECT_EQ(unfold(Tensor(Shape{1, 3, 6, 6}), g).patches.shape(), (Shape{16, 27}));
  const PatchGeometry def{64, 64, 64, 7, 7, 4};
  EXPECT_EQ(def.num_patches(), 225u);
}

TEST(Unfold, ChannelMajorOrder) {
  // Two channels: channel block first, then rows, then columns.
  const PatchSet s = unfold(iota_map(2, 2, 3), PatchGeometry{2, 2, 3, 2, 2, 1});
  EXPECT_EQ(row_of(s.patches, 1), (std::vector<real>{2, 3, 5, 6, 8, 9, 11, 12}));
}

TEST(Unfold, TrailingRegionNotCovered) {
  const PatchGeometry g{1, 5, 5, 2, 2, 2};
  EXPECT_FALSE(g.covers_fully());
  const auto counts = coverage_counts(g);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(counts[4 * 5 + i], 0u);
    EXPECT_EQ(counts[i * 5 + 4], 0u);
  }
  const FoldResult f = fold(unfold(iota_map(1, 5, 5), g));
  EXPECT_FALSE(f.covered[24]);
  EXPECT_EQ(f.map[24], 0.0f);
  EXPECT_TRUE(f.covered[0]);
  EXPECT_EQ(f.map[6], 7.0f);
}

TEST(Unfold, GeometryMismatchIsShapeError) {
  EXPECT_THROW(unfold(Tensor(Shape{1, 1, 4, 4}), PatchGeometry{1, 5, 4, 2, 2, 1}), ShapeError);
  EXPECT_THROW(unfold(Tensor(Shape{2, 1, 4, 4}), PatchGeometry{1, 4, 4, 2, 2, 1}), ShapeError);
  EXPECT_THROW(unfold(Tensor(Shape{1, 1, 4, 4}), PatchGeometry{1, 4, 4, 5, 2, 1}), ShapeError);
  const PatchSet s = unfold(Tensor(Shape{1, 1, 4, 4}), PatchGeometry{1, 4, 4, 2, 2, 2});
  EXPECT_THROW(fold(PatchSet{PatchGeometry{1, 4, 4, 2, 2, 1}, s.patches}), ShapeError);
}

TEST(Fold, PartitionRoundTripIsExact) {
  const Tensor x = random_tensor({1, 3, 4, 4}, 2);
  const FoldResult f = fold(unfold(x, PatchGeometry{3, 4, 4, 2, 2, 2}));
  EXPECT_EQ(f.map, x);
}

TEST(Fold, OverlapAveragesRow) {
  const Tensor row = Tensor::from({1, 1, 1, 3}, {2.0f, -3.0f, 5.0f});
  const PatchGeometry g{1, 1, 3, 1, 2, 1};
  const PatchSet s = unfold(row, g);
  EXPECT_EQ(row_of(s.patches, 0), (std::vector<real>{2.0f, -3.0f}));
  EXPECT_EQ(row_of(s.patches, 1), (std::vector<real>{-3.0f, 5.0f}));
  EXPECT_EQ(coverage_counts(g), (std::vector<std::size_t>{1, 2, 1}));
  EXPECT_EQ(fold(s).map, row);
}

TEST(Fold, ZerosStayZero) {
  const PatchGeometry g{2, 7, 7, 3, 3, 2};
  const FoldResult f = fold(PatchSet{g, Tensor(Shape{g.num_patches(), g.patch_len()})});
  for (real v : f.map.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Fold, RoundTripOnRandomFullCoverageGeometries) {
  Rng rng(3, 0);
  int checked = 0;
  while (checked < 40) {
    const std::size_t patch = 1 + rng.below(5), stride = 1 + rng.below(4), c = 1 + rng.below(3);
    const std::size_t h = patch + stride * rng.below(4), w = patch + stride * rng.below(4);
    const PatchGeometry g{c, h, w, patch, patch, stride};
    if (!g.covers_fully() || stride > patch) continue;
    const Tensor x = random_tensor({1, c, h, w}, 100 + checked);
    const FoldResult f = fold(unfold(x, g));
    EXPECT_LE(max_abs_diff(f.map, x), 1e-6f) << "patch " << patch << " stride " << stride;
    ++checked;
  }
}

TEST(Fold, CoverageCountsMatchBruteForce) {
  Rng rng(4, 0);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t ph = 1 + rng.below(4), pw = 1 + rng.below(4), s = 1 + rng.below(4);
    const std::size_t h = ph + rng.below(9), w = pw + rng.below(9), c = 1 + rng.below(2);
    const PatchGeometry g{c, h, w, ph, pw, s};
    const auto counts = coverage_counts(g);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          std::size_t brute = 0;
          for (std::size_t r = 0; r < g.grid_h(); ++r) {
            for (std::size_t q = 0; q < g.grid_w(); ++q) {
              if (y >= r * s && y < r * s + ph && x >= q * s && x < q * s + pw) ++brute;
            }
          }
          EXPECT_EQ(counts[(ch * h + y) * w + x], brute);
        }
      }
    }
  }
}

TEST(Fold, Linearity) {
  const PatchGeometry g{2, 9, 9, 3, 3, 2};
  const Tensor x = random_tensor({1, 2, 9, 9}, 5), y = random_tensor({1, 2, 9, 9}, 6);
  const real a = 0.75f, b = -1.5f;
  Tensor mix(x.shape());
  for (std::size_t i = 0; i < mix.numel(); ++i) mix[i] = a * x[i] + b * y[i];
  const Tensor ux = unfold(x, g).patches, uy = unfold(y, g).patches, um = unfold(mix, g).patches;
  for (std::size_t i = 0; i < um.numel(); ++i) EXPECT_NEAR(um[i], a * ux[i] + b * uy[i], 1e-6);

  const Tensor px = random_tensor(ux.shape(), 7), py = random_tensor(ux.shape(), 8);
  Tensor pm(px.shape());
  for (std::size_t i = 0; i < pm.numel(); ++i) pm[i] = a * px[i] + b * py[i];
  const Tensor fx = fold(PatchSet{g, px}).map, fy = fold(PatchSet{g, py}).map, fm = fold(PatchSet{g, pm}).map;
  for (std::size_t i = 0; i < fm.numel(); ++i) EXPECT_NEAR(fm[i], a * fx[i] + b * fy[i], 1e-6);
}

TEST(Fold, DifferentiableVersionsMatchTensorVersions) {
  const PatchGeometry g{2, 7, 7, 3, 3, 2};
  const Tensor x = random_tensor({1, 2, 7, 7}, 9);
  Var v(x, true);
  const Var u = unfold(v, g);
  EXPECT_EQ(u.value(), unfold(x, g).patches);
  const Var f = fold(u, g);
  EXPECT_EQ(f.value(), fold(unfold(x, g)).map);
}

TEST(AlignedExtent, ReachesNextGridEdge) {
  EXPECT_EQ(aligned_extent(64, 7, 4), 67u);
  EXPECT_EQ(aligned_extent(67, 7, 4), 67u);
  EXPECT_EQ(aligned_extent(3, 7, 4), 7u);
  EXPECT_EQ(aligned_extent(8, 7, 4), 11u);
  for (std::size_t n = 1; n < 40; ++n) {
    const std::size_t e = aligned_extent(n, 5, 3);
    EXPECT_GE(e, n);
    EXPECT_EQ((e - 5) % 3, 0u);
    EXPECT_LT(e - n, 5u);
  }
}
