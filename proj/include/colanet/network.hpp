#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "colanet/attention.hpp"
#include "colanet/layers.hpp"
#include "colanet/ops.hpp"
#include "colanet/patch.hpp"

namespace colanet {
inline namespace COLANET_PRECISION_NS {

enum class FemVariant { basic, enhanced };

inline const char* to_string(FemVariant v) { return v == FemVariant::basic ? "basic" : "enhanced"; }

/// Architecture hyperparameters. Defaults give COLA-B; `enhanced()` gives
/// COLA-E.
struct ModelConfig {
  FemVariant variant = FemVariant::basic;
  std::size_t num_cab = 4;
  std::size_t channels = 64;
  std::size_t in_channels = 1;
  std::size_t fem_depth = 6;
  std::size_t patch_size = 7;
  std::size_t patch_stride = 4;
  std::size_t ca_reduction = 4;
  // Local-branch 3x3 convolutions are grouped; 1 makes them dense.
  std::size_t local_groups = 4;
  // When set, both local branches use one channel-attention gate.
  bool shared_local_gate = false;
  // Divide patch similarities by sqrt(patch length) before the softmax.
  bool scaled_similarity = false;
  float bn_eps = 1e-5f;
  float bn_momentum = 0.1f;

  static ModelConfig basic() { return ModelConfig{}; }
  static ModelConfig enhanced() {
    ModelConfig c;
    c.variant = FemVariant::enhanced;
    c.fem_depth = 5;
    return c;
  }

  void validate() const {
    if (num_cab == 0) throw ConfigError("model: num_cab must be >= 1");
    if (fem_depth == 0) throw ConfigError("model: fem_depth must be >= 1");
    if (channels == 0) throw ConfigError("model: channels must be positive");
    if (in_channels != 1 && in_channels != 3) throw ConfigError("model: in_channels must be 1 or 3");
    if (patch_size == 0 || patch_stride == 0) throw ConfigError("model: patch size and stride must be positive");
    if (ca_reduction == 0 || channels % ca_reduction != 0) {
      throw ConfigError("model: ca_reduction must divide channels");
    }
    if (local_groups == 0 || channels % local_groups != 0) {
      throw ConfigError("model: local_groups must divide channels");
    }
    if (!(bn_eps > 0.0f)) throw ConfigError("model: bn_eps must be positive");
    if (bn_momentum < 0.0f || bn_momentum > 1.0f) throw ConfigError("model: bn_momentum outside [0,1]");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named learnable tensor with optional Adam moment buffers (both empty or
/// both shaped like the value).
struct ParamTensor {
  std::string name;
  Var value;
  Tensor first_moment;
  Tensor second_moment;

  bool has_moments() const { return !first_moment.empty(); }
};

struct NamedBuffer {
  std::string name;
  Var value;
};

struct CensusReport {
  std::size_t total = 0;
  std::vector<std::pair<std::string, std::size_t>> groups;  // in registration order
};

/// Ordered parameter registry. Names are unique; buffers (batch-norm running
/// statistics) are persisted but not counted or optimized.
class ModelWeights {
 public:
  void add_param(std::string name, const Var& v) {
    check_unique(name);
    index_[name] = params_.size();
    params_.push_back(ParamTensor{std::move(name), v, {}, {}});
  }

  void add_buffer(std::string name, const Var& v) {
    check_unique(name);
    buffer_index_[name] = buffers_.size();
    buffers_.push_back(NamedBuffer{std::move(name), v});
  }

  std::vector<ParamTensor>& params() { return params_; }
  const std::vector<ParamTensor>& params() const { return params_; }
  const std::vector<NamedBuffer>& buffers() const { return buffers_; }

  const ParamTensor* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  /// Overwrites a parameter or buffer value, keeping its identity on the tape.
  void assign(const std::string& name, const Tensor& value) {
    Var* target = nullptr;
    if (auto it = index_.find(name); it != index_.end()) target = &params_[it->second].value;
    if (auto it = buffer_index_.find(name); it != buffer_index_.end()) target = &buffers_[it->second].value;
    if (!target) throw FormatError("unknown tensor name '" + name + "'");
    if (target->shape() != value.shape()) {
      throw FormatError("tensor '" + name + "' has shape " + shape_str(value.shape()) + ", model expects " +
                        shape_str(target->shape()));
    }
    target->mutable_value() = value;
  }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.value().numel();
    return n;
  }

 private:
  void check_unique(const std::string& name) const {
    if (index_.count(name) || buffer_index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  }

  std::vector<ParamTensor> params_;
  std::vector<NamedBuffer> buffers_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::size_t> buffer_index_;
};

/// Census grouped by module path: "head", "tail", or "cab.<i>.<part>".
inline CensusReport param_census(const ModelWeights& weights) {
  CensusReport r;
  std::map<std::string, std::size_t> slot;
  for (const auto& p : weights.params()) {
    std::string key;
    std::size_t dots = 0, cut = p.name.size();
    const std::size_t depth = p.name.rfind("cab.", 0) == 0 ? 3 : 1;
    for (std::size_t i = 0; i < p.name.size(); ++i) {
      if (p.name[i] == '.' && ++dots == depth) {
        cut = i;
        break;
      }
    }
    key = p.name.substr(0, cut);
    const std::size_t n = p.value.value().numel();
    r.total += n;
    auto [it, inserted] = slot.emplace(key, r.groups.size());
    if (inserted) r.groups.emplace_back(key, 0);
    r.groups[it->second].second += n;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Feature extraction modules

/// conv 3x3 -> batch norm -> relu.
struct BasicBlock {
  ConvParams conv;
  BatchNormParams bn;
};

/// in + conv(relu(conv(in))).
struct ResidualBlock {
  ConvParams conv1;
  ConvParams conv2;
};

struct NormSettings {
  NormMode mode = NormMode::infer;
  real eps = 1e-5f;
  real momentum = 0.1f;
};

inline Var fem_basic(const Var& input, std::vector<BasicBlock>& blocks, const NormSettings& norm) {
  Var x = input;
  for (auto& b : blocks) x = relu(apply(b.bn, apply(b.conv, x), norm.mode, norm.eps, norm.momentum));
  return x;
}

inline Var fem_enhanced(const Var& input, const std::vector<ResidualBlock>& blocks) {
  Var x = input;
  for (const auto& b : blocks) x = add(x, apply(b.conv2, relu(apply(b.conv1, x))));
  return x;
}

// ---------------------------------------------------------------------------
// Collaborative attention block

struct CabParams {
  std::vector<BasicBlock> fem_basic;       // used by the basic variant
  std::vector<ResidualBlock> fem_enhanced;  // used by the enhanced variant
  NonLocalParams nonlocal;
  LocalAttentionParams local;
  FusionParams fusion;
};

struct CabResult {
  Var output;
  AttentionTrace trace;
};

/// FEM, then the non-local and local branches in parallel on its output,
/// then adaptive fusion. `geometry` must match the FEM output map.
inline CabResult cab_forward(const Var& input, CabParams& params, const ModelConfig& cfg,
                             const PatchGeometry& geometry, const NormSettings& norm, std::size_t cab_index = 0) {
  const Var features = cfg.variant == FemVariant::basic ? fem_basic(input, params.fem_basic, norm)
                                                        : fem_enhanced(input, params.fem_enhanced);
  NonLocalResult nl = nonlocal_attention(features, params.nonlocal, geometry, cfg.scaled_similarity);
  const Var local = local_attention(features, params.local);
  FusionResult fused = fuse_branches(nl.output, local, params.fusion);
  CabResult r;
  r.output = fused.output;
  r.trace.distance = std::move(nl.distance);
  r.trace.fusion_w_nl = fused.w_nl.value();
  r.trace.fusion_w_l = fused.w_l.value();
  r.trace.cab_index = cab_index;
  return r;
}

struct ForwardResult {
  Var output;
  std::vector<AttentionTrace> traces;
};

/// COLA-Net: shallow conv, a cascade of CABs, a tail conv back to image
/// channels, and a global residual connection to the input.
class ColaNet {
 public:
  explicit ColaNet(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed, 0x1417);
    const std::size_t c = cfg_.channels;
    head_ = make_conv(c, cfg_.in_channels, 3, 1, rng);
    register_conv("head", head_);
    cabs_.resize(cfg_.num_cab);
    for (std::size_t i = 0; i < cfg_.num_cab; ++i) {
      const std::string prefix = "cab." + std::to_string(i) + ".";
      CabParams& cab = cabs_[i];
      for (std::size_t j = 0; j < cfg_.fem_depth; ++j) {
        const std::string bp = prefix + "fem." + std::to_string(j) + ".";
        if (cfg_.variant == FemVariant::basic) {
          BasicBlock b{make_conv(c, c, 3, 1, rng), make_batch_norm(c)};
          register_conv(bp + "conv", b.conv);
          weights_.add_param(bp + "bn.gamma", b.bn.gamma);
          weights_.add_param(bp + "bn.beta", b.bn.beta);
          weights_.add_buffer(bp + "bn.running_mean", b.bn.running_mean);
          weights_.add_buffer(bp + "bn.running_var", b.bn.running_var);
          cab.fem_basic.push_back(std::move(b));
        } else {
          ResidualBlock b{make_conv(c, c, 3, 1, rng), make_conv(c, c, 3, 1, rng)};
          register_conv(bp + "conv1", b.conv1);
          register_conv(bp + "conv2", b.conv2);
          cab.fem_enhanced.push_back(std::move(b));
        }
      }
      cab.nonlocal = make_nonlocal(c, rng);
      register_conv(prefix + "nonlocal.theta", cab.nonlocal.theta);
      register_conv(prefix + "nonlocal.phi", cab.nonlocal.phi);
      register_conv(prefix + "nonlocal.g", cab.nonlocal.g);

      cab.local = make_local_attention(c, cfg_.ca_reduction, cfg_.local_groups, rng);
      if (cfg_.shared_local_gate) cab.local.b_gate = cab.local.a_gate;
      register_conv(prefix + "local.a.conv", cab.local.a_conv);
      register_conv(prefix + "local.b.conv1", cab.local.b_conv1);
      register_conv(prefix + "local.b.conv2", cab.local.b_conv2);
      register_linear(prefix + "local.a.gate.squeeze", cab.local.a_gate.squeeze);
      register_linear(prefix + "local.a.gate.excite", cab.local.a_gate.excite);
      if (!cfg_.shared_local_gate) {
        register_linear(prefix + "local.b.gate.squeeze", cab.local.b_gate.squeeze);
        register_linear(prefix + "local.b.gate.excite", cab.local.b_gate.excite);
      }

      cab.fusion = make_fusion(c, rng);
      register_linear(prefix + "fusion.fc1", cab.fusion.fc1);
      register_linear(prefix + "fusion.fc2", cab.fusion.fc2);
    }
    tail_ = make_conv(cfg_.in_channels, c, 3, 1, rng);
    register_conv("tail", tail_);
  }

  ColaNet(const ColaNet&) = delete;
  ColaNet& operator=(const ColaNet&) = delete;
  ColaNet(ColaNet&&) = default;
  ColaNet& operator=(ColaNet&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ModelWeights& weights() { return weights_; }
  const ModelWeights& weights() const { return weights_; }

  ConvParams& head() { return head_; }
  ConvParams& tail() { return tail_; }
  std::vector<CabParams>& cabs() { return cabs_; }

  /// Runs the network. Inputs whose height or width does not sit on the
  /// patch grid are reflect-padded bottom/right and cropped back at the end.
  ForwardResult forward(const Var& input, NormMode mode = NormMode::infer) {
    require_rank(input.value(), 4, "cola_forward input");
    const Shape& s = input.shape();
    if (s[1] != cfg_.in_channels) {
      throw ShapeError("cola_forward: expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                       shape_str(s));
    }
    const std::size_t h = s[2], w = s[3];
    const std::size_t hp = aligned_extent(h, cfg_.patch_size, cfg_.patch_stride);
    const std::size_t wp = aligned_extent(w, cfg_.patch_size, cfg_.patch_stride);
    const Var padded = pad_reflect(input, hp - h, wp - w);
    const PatchGeometry geometry{cfg_.channels, hp, wp, cfg_.patch_size, cfg_.patch_size, cfg_.patch_stride};
    const NormSettings norm{mode, cfg_.bn_eps, cfg_.bn_momentum};

    ForwardResult r;
    Var x = apply(head_, padded);
    for (std::size_t i = 0; i < cabs_.size(); ++i) {
      CabResult cr = cab_forward(x, cabs_[i], cfg_, geometry, norm, i);
      x = cr.output;
      r.traces.push_back(std::move(cr.trace));
    }
    r.output = add(input, crop(apply(tail_, x), h, w));
    return r;
  }

 private:
  void register_conv(const std::string& prefix, const ConvParams& p) {
    weights_.add_param(prefix + ".weight", p.weight);
    weights_.add_param(prefix + ".bias", p.bias);
  }
  void register_linear(const std::string& prefix, const LinearParams& p) {
    weights_.add_param(prefix + ".weight", p.weight);
    weights_.add_param(prefix + ".bias", p.bias);
  }

  ModelConfig cfg_;
  ModelWeights weights_;
  ConvParams head_;
  std::vector<CabParams> cabs_;
  ConvParams tail_;
};

inline ForwardResult cola_forward(const Var& i_lq, ColaNet& model, NormMode mode = NormMode::infer) {
  return model.forward(i_lq, mode);
}

/// Mean over all elements of the squared difference.
inline Var l2_loss(const Var& pred, const Var& target) { return mse_loss(pred, target); }

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
