#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "colanet/layers.hpp"
#include "colanet/ops.hpp"
#include "colanet/patch.hpp"

// The dual-branch fusion module: patch-wise non-local attention, multi-scale
// local attention with channel gating, and the adaptive per-channel fusion.
namespace colanet {
inline namespace COLANET_PRECISION_NS {

/// Per-CAB record for heat maps and attention dumps.
struct AttentionTrace {
  std::vector<Tensor> distance;  // one N_patches x N_patches softmax matrix per batch item
  Tensor fusion_w_nl;            // N x C
  Tensor fusion_w_l;             // N x C
  std::size_t cab_index = 0;
};

// ---------------------------------------------------------------------------
// Non-local branch

/// The three channel-preserving 1x1 embeddings: theta (query), phi (key),
/// g (value).
struct NonLocalParams {
  ConvParams theta;
  ConvParams phi;
  ConvParams g;
};

inline NonLocalParams make_nonlocal(std::size_t channels, Rng& rng) {
  NonLocalParams p;
  p.theta = make_conv(channels, channels, 1, 1, rng);
  p.phi = make_conv(channels, channels, 1, 1, rng);
  p.g = make_conv(channels, channels, 1, 1, rng);
  return p;
}

struct NonLocalResult {
  Var output;
  std::vector<Tensor> distance;
};

/// Patch-wise self-attention. Query, key and value maps are unfolded into
/// flattened 3D patches; every query patch attends over all key patches of
/// the same batch item and the reweighted value patches are folded back with
/// overlap averaging. `scaled` divides similarities by sqrt(patch length).
inline NonLocalResult nonlocal_attention(const Var& input, const NonLocalParams& params,
                                         const PatchGeometry& geometry, bool scaled = false) {
  require_rank(input.value(), 4, "nonlocal_attention input");
  const Shape& s = input.shape();
  if (geometry.channels != s[1] || geometry.height != s[2] || geometry.width != s[3]) {
    throw ShapeError("nonlocal_attention: geometry does not match input " + shape_str(s));
  }
  geometry.validate();
  for (const ConvParams* c : {&params.theta, &params.phi, &params.g}) {
    const Shape& w = c->weight.shape();
    if (w.size() != 4 || w[2] != 1 || w[3] != 1 || w[0] != s[1] || w[1] * c->groups != s[1]) {
      throw ShapeError("nonlocal_attention: embeddings must be channel-preserving 1x1 convolutions");
    }
  }

  const Var q = apply(params.theta, input);
  const Var k = apply(params.phi, input);
  const Var v = apply(params.g, input);
  const real sim_scale = scaled ? 1.0f / std::sqrt(static_cast<real>(geometry.patch_len())) : 1.0f;

  NonLocalResult result;
  std::vector<Var> items;
  items.reserve(s[0]);
  for (std::size_t b = 0; b < s[0]; ++b) {
    const Var qp = unfold(slice_batch(q, b), geometry);
    const Var kp = unfold(slice_batch(k, b), geometry);
    const Var vp = unfold(slice_batch(v, b), geometry);
    Var sim = matmul_nt(qp, kp);
    if (scaled) sim = scale(sim, sim_scale);
    const Var m = softmax(sim, 1);
    result.distance.push_back(m.value());
    items.push_back(fold(matmul(m, vp), geometry));
  }
  result.output = items.size() == 1 ? items.front() : concat_batch(items);
  return result;
}

inline NonLocalResult nonlocal_attention(const Var& input, const NonLocalParams& params, std::size_t patch,
                                         std::size_t stride, bool scaled = false) {
  return nonlocal_attention(input, params, geometry_for(input.shape(), patch, stride), scaled);
}

// ---------------------------------------------------------------------------
// Local branch

/// Squeeze (C -> C/r) and excite (C/r -> C) affine maps.
struct ChannelAttentionParams {
  LinearParams squeeze;
  LinearParams excite;
};

inline ChannelAttentionParams make_channel_attention(std::size_t channels, std::size_t reduction, Rng& rng) {
  if (reduction == 0 || channels % reduction != 0) {
    throw ConfigError("channel attention: reduction " + std::to_string(reduction) + " does not divide " +
                      std::to_string(channels) + " channels");
  }
  const std::size_t hidden = channels / reduction;
  ChannelAttentionParams p;
  p.squeeze = make_linear(hidden, channels, rng);
  p.excite = make_linear(channels, hidden, rng);
  return p;
}

/// x scaled per channel by sigmoid(excite(relu(squeeze(gap(x))))).
inline Var channel_attention(const Var& input, const ChannelAttentionParams& params) {
  require_rank(input.value(), 4, "channel_attention input");
  const std::size_t c = input.shape()[1];
  const Shape& sq = params.squeeze.weight.shape();
  const Shape& ex = params.excite.weight.shape();
  if (sq.size() != 2 || ex.size() != 2 || sq[1] != c || ex[0] != c || ex[1] != sq[0]) {
    throw ShapeError("channel_attention: parameters do not match " + std::to_string(c) + " channels");
  }
  if (c % sq[0] != 0) throw ConfigError("channel_attention: reduction does not divide channel count");
  const Var gate = sigmoid(apply(params.excite, relu(apply(params.squeeze, global_avg_pool(input)))));
  return scale_channels(input, gate);
}

/// Branch A: conv + relu. Branch B: conv, relu, conv (wider receptive field).
/// Each branch is gated by its own channel attention and the two are summed.
struct LocalAttentionParams {
  ConvParams a_conv;
  ConvParams b_conv1;
  ConvParams b_conv2;
  ChannelAttentionParams a_gate;
  ChannelAttentionParams b_gate;
};

inline LocalAttentionParams make_local_attention(std::size_t channels, std::size_t reduction, std::size_t groups,
                                                 Rng& rng) {
  LocalAttentionParams p;
  p.a_conv = make_conv(channels, channels, 3, groups, rng);
  p.b_conv1 = make_conv(channels, channels, 3, groups, rng);
  p.b_conv2 = make_conv(channels, channels, 3, groups, rng);
  p.a_gate = make_channel_attention(channels, reduction, rng);
  p.b_gate = make_channel_attention(channels, reduction, rng);
  return p;
}

inline Var local_attention(const Var& input, const LocalAttentionParams& params) {
  const Var a = relu(apply(params.a_conv, input));
  const Var b = apply(params.b_conv2, relu(apply(params.b_conv1, input)));
  return add(channel_attention(a, params.a_gate), channel_attention(b, params.b_gate));
}

// ---------------------------------------------------------------------------
// Fusion

/// Two independent C -> C affine maps producing the branch logits.
struct FusionParams {
  LinearParams fc1;  // non-local logits
  LinearParams fc2;  // local logits
};

inline FusionParams make_fusion(std::size_t channels, Rng& rng) {
  FusionParams p;
  p.fc1 = make_linear(channels, channels, rng);
  p.fc2 = make_linear(channels, channels, rng);
  return p;
}

struct FusionResult {
  Var output;
  Var w_nl;  // N x C
  Var w_l;   // N x C
};

/// v = gap(f_nl + f_l); per channel, softmax over the two branch logits
/// fc1(v), fc2(v) gives (w_nl, w_l); output = f_nl * w_nl + f_l * w_l.
inline FusionResult fuse_branches(const Var& f_nl, const Var& f_l, const FusionParams& params) {
  if (f_nl.shape() != f_l.shape()) {
    throw ShapeError("fuse_branches: branch shapes differ " + shape_str(f_nl.shape()) + " vs " +
                     shape_str(f_l.shape()));
  }
  require_rank(f_nl.value(), 4, "fuse_branches input");
  const Var v = global_avg_pool(add(f_nl, f_l));
  const Var weights = softmax(stack_pair(apply(params.fc1, v), apply(params.fc2, v)), 2);
  FusionResult r;
  r.w_nl = take_last(weights, 0);
  r.w_l = take_last(weights, 1);
  r.output = add(scale_channels(f_nl, r.w_nl), scale_channels(f_l, r.w_l));
  return r;
}

/// Fraction of channels whose local weight is at least the non-local weight.
inline double heat_value(std::span<const real> w_nl, std::span<const real> w_l) {
  if (w_nl.size() != w_l.size()) throw ShapeError("heat_value: weight vectors differ in length");
  if (w_nl.empty()) throw ShapeError("heat_value: empty weight vectors");
  std::size_t local = 0;
  for (std::size_t m = 0; m < w_nl.size(); ++m) local += w_l[m] >= w_nl[m] ? 1 : 0;
  return static_cast<double>(local) / static_cast<double>(w_nl.size());
}

inline double heat_map(const Tensor& w_nl, const Tensor& w_l) {
  if (w_nl.shape() != w_l.shape()) throw ShapeError("heat_map: weight shapes differ");
  return heat_value(w_nl.data(), w_l.data());
}

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
