#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "colanet/attention.hpp"
#include "test_util.hpp"

using namespace colanet;
using colanet::testing::naive_conv;
using colanet::testing::random_tensor;
using colanet::testing::sigmoid_ref;

namespace {

ConvParams identity_embedding(std::size_t c) {
  Tensor w(Shape{c, c, 1, 1});
  for (std::size_t i = 0; i < c; ++i) w[i * c + i] = 1.0f;
  return ConvParams{Var(w, true), Var(Tensor(Shape{c}), true), 0, 1};
}

NonLocalParams identity_nonlocal(std::size_t c) {
  return NonLocalParams{identity_embedding(c), identity_embedding(c), identity_embedding(c)};
}

ChannelAttentionParams zero_gate(std::size_t c, std::size_t r) {
  return ChannelAttentionParams{LinearParams{Var(Tensor(Shape{c / r, c}), true), Var(Tensor(Shape{c / r}), true)},
                                LinearParams{Var(Tensor(Shape{c, c / r}), true), Var(Tensor(Shape{c}), true)}};
}

void expect_rows_are_distributions(const Tensor& m) {
  const std::size_t n = m.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      EXPECT_GE(m[i * n + j], 0.0f);
      s += m[i * n + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-5);
  }
}

// Patch-level oracle: softmax(Q K^T) V over flattened non-overlapping patches.
std::vector<std::vector<double>> brute_attention(const std::vector<std::vector<double>>& patches) {
  const std::size_t n = patches.size();
  std::vector<std::vector<double>> out(n, std::vector<double>(patches[0].size(), 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> sim(n);
    for (std::size_t j = 0; j < n; ++j) {
      sim[j] = std::inner_product(patches[i].begin(), patches[i].end(), patches[j].begin(), 0.0);
    }
    const double mx = *std::max_element(sim.begin(), sim.end());
    double z = 0.0;
    for (auto& s : sim) z += (s = std::exp(s - mx));
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < patches[j].size(); ++k) out[i][k] += sim[j] / z * patches[j][k];
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- non-local

TEST(NonLocal, SinglePatchReturnsValueEmbedding) {
  Rng rng(1, 0);
  const NonLocalParams p = make_nonlocal(3, rng);
  const Var x(random_tensor({2, 3, 5, 5}, 2));
  const NonLocalResult r = nonlocal_attention(x, p, 5, 3);
  ASSERT_EQ(r.distance.size(), 2u);
  for (const auto& m : r.distance) {
    ASSERT_EQ(m.shape(), (Shape{1, 1}));
    EXPECT_EQ(m[0], 1.0f);
  }
  const Tensor gx = apply(p.g, x).value();
  EXPECT_LE(max_abs_diff(r.output.value(), gx), 1e-6f);
}

TEST(NonLocal, TwoIdenticalPatchesAreUnchanged) {
  Tensor x(Shape{1, 2, 2, 4});
  const Tensor half = random_tensor({2, 2, 2}, 3);
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t j = 0; j < 2; ++j) x.at(0, c, i, j) = x.at(0, c, i, j + 2) = half[(c * 2 + i) * 2 + j];
    }
  }
  const NonLocalResult r = nonlocal_attention(Var(x), identity_nonlocal(2), PatchGeometry{2, 2, 4, 2, 2, 2});
  for (real v : r.distance[0].data()) EXPECT_FLOAT_EQ(v, 0.5f);
  EXPECT_LE(max_abs_diff(r.output.value(), x), 1e-6f);
}

TEST(NonLocal, DistinctPatchesMatchBruteForce) {
  const Tensor x = Tensor::from({1, 1, 2, 4}, {0.5f, -0.2f, 0.9f, 0.1f, 0.3f, 0.4f, -0.7f, 0.6f});
  const NonLocalResult r = nonlocal_attention(Var(x), identity_nonlocal(1), PatchGeometry{1, 2, 4, 2, 2, 2});
  const auto expect = brute_attention({{0.5, -0.2, 0.3, 0.4}, {0.9, 0.1, -0.7, 0.6}});
  const Tensor& y = r.output.value();
  EXPECT_NEAR(y.at(0, 0, 0, 0), expect[0][0], 1e-5);
  EXPECT_NEAR(y.at(0, 0, 0, 1), expect[0][1], 1e-5);
  EXPECT_NEAR(y.at(0, 0, 1, 0), expect[0][2], 1e-5);
  EXPECT_NEAR(y.at(0, 0, 1, 1), expect[0][3], 1e-5);
  EXPECT_NEAR(y.at(0, 0, 0, 2), expect[1][0], 1e-5);
  EXPECT_NEAR(y.at(0, 0, 0, 3), expect[1][1], 1e-5);
  EXPECT_NEAR(y.at(0, 0, 1, 2), expect[1][2], 1e-5);
  EXPECT_NEAR(y.at(0, 0, 1, 3), expect[1][3], 1e-5);
}

TEST(NonLocal, RowsAreDistributionsAndShapePreserved) {
  Rng rng(4, 0);
  const NonLocalParams p = make_nonlocal(4, rng);
  const Var x(random_tensor({3, 4, 11, 11}, 5, -3.0f, 3.0f));
  const NonLocalResult r = nonlocal_attention(x, p, 3, 2);
  EXPECT_EQ(r.output.shape(), x.shape());
  ASSERT_EQ(r.distance.size(), 3u);
  for (const auto& m : r.distance) {
    ASSERT_EQ(m.shape(), (Shape{25, 25}));
    expect_rows_are_distributions(m);
  }
}

TEST(NonLocal, ScaledSimilarityDividesBySqrtLength) {
  const Tensor x = random_tensor({1, 1, 2, 4}, 6, -2.0f, 2.0f);
  const NonLocalResult r = nonlocal_attention(Var(x), identity_nonlocal(1), PatchGeometry{1, 2, 4, 2, 2, 2}, true);
  const PatchSet s = unfold(x, PatchGeometry{1, 2, 4, 2, 2, 2});
  double sim[2][2];
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      sim[i][j] = 0.0;
      for (int k = 0; k < 4; ++k) sim[i][j] += static_cast<double>(s.patches[i * 4 + k]) * s.patches[j * 4 + k];
      sim[i][j] /= 2.0;
    }
  }
  EXPECT_NEAR(r.distance[0][1], sigmoid_ref(sim[0][1] - sim[0][0]), 1e-6);
  EXPECT_NEAR(r.distance[0][2], sigmoid_ref(sim[1][0] - sim[1][1]), 1e-6);
}

TEST(NonLocal, GeometryMismatchIsShapeError) {
  const Var x(Tensor(Shape{1, 2, 6, 6}));
  const NonLocalParams p = identity_nonlocal(2);
  EXPECT_THROW(nonlocal_attention(x, p, PatchGeometry{2, 6, 5, 2, 2, 2}), ShapeError);
  EXPECT_THROW(nonlocal_attention(x, p, 7, 1), ShapeError);
  EXPECT_THROW(nonlocal_attention(Var(Tensor(Shape{1, 3, 6, 6})), p, 2, 2), ShapeError);
}

TEST(NonLocal, PermutationEquivariance) {
  // 2 x 3 grid of non-overlapping 2x2 patches on a 2-channel map.
  const PatchGeometry g{2, 4, 6, 2, 2, 2};
  const Tensor x = random_tensor({1, 2, 4, 6}, 7, -1.5f, 1.5f);
  const std::vector<std::size_t> perm{4, 0, 5, 2, 1, 3};
  const PatchSet px = unfold(x, g);
  Tensor permuted_patches(px.patches.shape());
  const std::size_t len = g.patch_len();
  for (std::size_t p = 0; p < perm.size(); ++p) {
    for (std::size_t k = 0; k < len; ++k) permuted_patches[p * len + k] = px.patches[perm[p] * len + k];
  }
  const Tensor xp = fold(PatchSet{g, permuted_patches}).map;

  const NonLocalParams id = identity_nonlocal(2);
  const NonLocalResult a = nonlocal_attention(Var(x), id, g);
  const NonLocalResult b = nonlocal_attention(Var(xp), id, g);
  const Tensor ya = unfold(a.output.value(), g).patches;
  const Tensor yb = unfold(b.output.value(), g).patches;
  for (std::size_t p = 0; p < perm.size(); ++p) {
    for (std::size_t k = 0; k < len; ++k) EXPECT_NEAR(yb[p * len + k], ya[perm[p] * len + k], 1e-5);
    for (std::size_t q = 0; q < perm.size(); ++q) {
      EXPECT_NEAR(b.distance[0][p * 6 + q], a.distance[0][perm[p] * 6 + perm[q]], 1e-5);
    }
  }
}

TEST(NonLocal, RepeatedTextureAttractsMass) {
  // Left and right halves carry the same texture plus small independent noise.
  const std::size_t h = 8, w = 16, ps = 4;
  const Tensor texture = random_tensor({1, 1, h, w / 2}, 8, -1.0f, 1.0f);
  const Tensor noise = random_tensor({1, 1, h, w}, 9, -0.05f, 0.05f);
  Tensor x(Shape{1, 1, h, w});
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      x.at(0, 0, i, j) = 2.0f * texture.at(0, 0, i, j % (w / 2)) + noise.at(0, 0, i, j);
    }
  }
  const PatchGeometry g{1, h, w, ps, ps, ps};
  const NonLocalResult r = nonlocal_attention(Var(x), identity_nonlocal(1), g);
  const Tensor& m = r.distance[0];
  const std::size_t gw = g.grid_w(), n = g.num_patches();
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t row = p / gw, col = p % gw;
    const std::size_t match = row * gw + (col + gw / 2) % gw;
    double other = 0.0;
    for (std::size_t q = 0; q < n; ++q) {
      if (q != p && q != match) other += m[p * n + q];
    }
    EXPECT_GT(m[p * n + match], other) << "patch " << p;
  }
}

// ---------------------------------------------------------------- channel attention

TEST(ChannelAttention, ZeroWeightsHalveInput) {
  const Var x(random_tensor({2, 4, 3, 3}, 10));
  const Var y = channel_attention(x, zero_gate(4, 2));
  for (std::size_t i = 0; i < x.value().numel(); ++i) EXPECT_FLOAT_EQ(y.value()[i], 0.5f * x.value()[i]);
}

TEST(ChannelAttention, ZeroInputZeroBiasesGivesZero) {
  Rng rng(11, 0);
  const ChannelAttentionParams p = make_channel_attention(4, 2, rng);
  const Var y = channel_attention(Var(Tensor(Shape{1, 4, 5, 5})), p);
  for (real v : y.value().data()) EXPECT_EQ(v, 0.0f);
}

TEST(ChannelAttention, HandChosenTwoChannelChain) {
  const ChannelAttentionParams p{
      LinearParams{Var(Tensor::from({2, 2}, {1.0f, -0.5f, 0.25f, 2.0f})), Var(Tensor::from({2}, {0.1f, -3.0f}))},
      LinearParams{Var(Tensor::from({2, 2}, {0.5f, 1.0f, -1.0f, 0.3f})), Var(Tensor::from({2}, {0.0f, 0.2f}))}};
  Tensor x(Shape{1, 2, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    x[i] = 0.8f;
    x[4 + i] = -0.4f;
  }
  const Var y = channel_attention(Var(x), p);
  const double v0 = 0.8, v1 = -0.4;
  const double h0 = std::max(0.0, 1.0 * v0 - 0.5 * v1 + 0.1);
  const double h1 = std::max(0.0, 0.25 * v0 + 2.0 * v1 - 3.0);
  const double s0 = sigmoid_ref(0.5 * h0 + 1.0 * h1);
  const double s1 = sigmoid_ref(-1.0 * h0 + 0.3 * h1 + 0.2);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(y.value()[i], v0 * s0, 1e-6);
    EXPECT_NEAR(y.value()[4 + i], v1 * s1, 1e-6);
  }
}

TEST(ChannelAttention, ReductionMustDivideChannels) {
  Rng rng(12, 0);
  EXPECT_THROW(make_channel_attention(6, 4, rng), ConfigError);
  EXPECT_THROW(make_channel_attention(6, 0, rng), ConfigError);
}

// ---------------------------------------------------------------- local attention

TEST(LocalAttention, ZeroNetworkGivesZero) {
  Rng rng(13, 0);
  LocalAttentionParams p = make_local_attention(4, 2, 1, rng);
  for (ConvParams* c : {&p.a_conv, &p.b_conv1, &p.b_conv2}) {
    c->weight.mutable_value().fill(0.0f);
    c->bias.mutable_value().fill(0.0f);
  }
  const Var y = local_attention(Var(random_tensor({2, 4, 6, 6}, 14)), p);
  for (real v : y.value().data()) EXPECT_EQ(v, 0.0f);
}

TEST(LocalAttention, ShapePreserved) {
  Rng rng(15, 0);
  const LocalAttentionParams p = make_local_attention(8, 4, 4, rng);
  const Var x(random_tensor({2, 8, 5, 7}, 16));
  EXPECT_EQ(local_attention(x, p).shape(), x.shape());
}

TEST(LocalAttention, OneChannelMatchesManualComposition) {
  Rng rng(17, 0);
  const LocalAttentionParams p = make_local_attention(1, 1, 1, rng);
  const Tensor x = random_tensor({1, 1, 4, 4}, 18);
  const Var y = local_attention(Var(x), p);

  auto relu_t = [](Tensor t) {
    for (auto& v : t.data()) v = std::max(v, real(0));
    return t;
  };
  auto gate = [](const Tensor& t, const ChannelAttentionParams& g) {
    double mean = 0.0;
    for (real v : t.data()) mean += v;
    mean /= static_cast<double>(t.numel());
    const double hdn = std::max(0.0, g.squeeze.weight.value()[0] * mean + g.squeeze.bias.value()[0]);
    const double s = sigmoid_ref(g.excite.weight.value()[0] * hdn + g.excite.bias.value()[0]);
    Tensor out = t;
    for (auto& v : out.data()) v = static_cast<real>(v * s);
    return out;
  };
  const Tensor a = relu_t(naive_conv(x, p.a_conv.weight.value(), p.a_conv.bias.value(), 1));
  const Tensor b1 = relu_t(naive_conv(x, p.b_conv1.weight.value(), p.b_conv1.bias.value(), 1));
  const Tensor b = naive_conv(b1, p.b_conv2.weight.value(), p.b_conv2.bias.value(), 1);
  const Tensor ga = gate(a, p.a_gate), gb = gate(b, p.b_gate);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(y.value()[i], ga[i] + gb[i], 1e-5);
}

// ---------------------------------------------------------------- fusion

TEST(Fusion, IdenticalMapsGiveEvenSplit) {
  Rng rng(19, 0);
  FusionParams p = make_fusion(3, rng);
  p.fc2 = p.fc1;
  const Var a(random_tensor({2, 3, 4, 4}, 20)), b(random_tensor({2, 3, 4, 4}, 21));
  const FusionResult r = fuse_branches(a, b, p);
  for (real v : r.w_nl.value().data()) EXPECT_FLOAT_EQ(v, 0.5f);
  for (real v : r.w_l.value().data()) EXPECT_FLOAT_EQ(v, 0.5f);
  for (std::size_t i = 0; i < a.value().numel(); ++i) {
    EXPECT_NEAR(r.output.value()[i], (a.value()[i] + b.value()[i]) / 2.0f, 1e-6);
  }
}

TEST(Fusion, WeightsOnSimplexAndOutputIsConvexBlend) {
  Rng rng(22, 0);
  const FusionParams p = make_fusion(5, rng);
  const Var a(random_tensor({3, 5, 4, 3}, 23)), b(random_tensor({3, 5, 4, 3}, 24));
  const FusionResult r = fuse_branches(a, b, p);
  const Tensor& wn = r.w_nl.value();
  const Tensor& wl = r.w_l.value();
  ASSERT_EQ(wn.shape(), (Shape{3, 5}));
  for (std::size_t i = 0; i < wn.numel(); ++i) EXPECT_NEAR(wn[i] + wl[i], 1.0f, 1e-5);
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t c = 0; c < 5; ++c) {
      const double w = wn[n * 5 + c];
      for (std::size_t k = 0; k < 12; ++k) {
        const std::size_t i = (n * 5 + c) * 12 + k;
        EXPECT_NEAR(r.output.value()[i], w * a.value()[i] + (1.0 - w) * b.value()[i], 1e-6);
      }
    }
  }
}

TEST(Fusion, TwoWaySoftmaxClosedForm) {
  const FusionParams p{LinearParams{Var(Tensor(Shape{2, 2})), Var(Tensor::from({2}, {2.0f, 0.0f}))},
                       LinearParams{Var(Tensor(Shape{2, 2})), Var(Tensor::from({2}, {0.0f, 2.0f}))}};
  const Var a(random_tensor({1, 2, 3, 3}, 25)), b(random_tensor({1, 2, 3, 3}, 26));
  const FusionResult r = fuse_branches(a, b, p);
  const double e2 = std::exp(2.0);
  const double w0 = e2 / (e2 + 1.0), w1 = 1.0 / (1.0 + e2);
  EXPECT_NEAR(r.w_nl.value()[0], w0, 1e-5);
  EXPECT_NEAR(r.w_nl.value()[1], w1, 1e-5);
  for (std::size_t k = 0; k < 9; ++k) {
    EXPECT_NEAR(r.output.value()[k], w0 * a.value()[k] + (1 - w0) * b.value()[k], 1e-5);
    EXPECT_NEAR(r.output.value()[9 + k], w1 * a.value()[9 + k] + (1 - w1) * b.value()[9 + k], 1e-5);
  }
}

TEST(Fusion, ShapeMismatchIsShapeError) {
  Rng rng(27, 0);
  const FusionParams p = make_fusion(2, rng);
  EXPECT_THROW(fuse_branches(Var(Tensor(Shape{1, 2, 3, 3})), Var(Tensor(Shape{1, 2, 3, 4})), p), ShapeError);
}

// ---------------------------------------------------------------- heat map

TEST(HeatMap, Examples) {
  EXPECT_EQ(heat_map(Tensor::from({3}, {0.2f, 0.5f, 0.1f}), Tensor::from({3}, {0.8f, 0.5f, 0.9f})), 1.0);
  EXPECT_EQ(heat_map(Tensor::from({3}, {0.6f, 0.7f, 0.9f}), Tensor::from({3}, {0.4f, 0.3f, 0.1f})), 0.0);
  EXPECT_EQ(heat_map(Tensor::from({4}, {0.3f, 0.6f, 0.2f, 0.9f}), Tensor::from({4}, {0.7f, 0.4f, 0.8f, 0.1f})), 0.5);
  EXPECT_THROW(heat_map(Tensor::from({2}, {0.5f, 0.5f}), Tensor::from({3}, {0.5f, 0.5f, 0.5f})), ShapeError);
}

TEST(HeatMap, RangeAndComplementWithoutTies) {
  Rng rng(28, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 1 + rng.below(16);
    const Tensor a = random_tensor({c}, 200 + trial, 0.0f, 1.0f), b = random_tensor({c}, 300 + trial, 0.0f, 1.0f);
    const double h = heat_map(a, b);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, 1.0);
    EXPECT_DOUBLE_EQ(heat_map(b, a), 1.0 - h);
  }
}
