#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "colanet/degradation.hpp"
#include "colanet/network.hpp"

namespace colanet {
inline namespace COLANET_PRECISION_NS {

struct TrainConfig {
  double base_lr = 1e-3;
  std::size_t halving_period_epochs = 200;
  // An epoch is a fixed number of optimizer steps.
  std::size_t steps_per_epoch = 100;
  std::size_t total_epochs = 1;
  // Overrides total_epochs * steps_per_epoch when non-zero.
  std::size_t max_steps = 0;
  std::size_t batch_size = 32;
  std::size_t crop = 64;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  bool augment = true;
  // Global gradient-norm clip; 0 disables it.
  double grad_clip = 0.0;
  std::size_t checkpoint_every = 0;
  // Blind training draws the AWGN sigma per batch from [sigma_min, sigma_max].
  bool blind = false;
  double sigma_min = 10.0;
  double sigma_max = 50.0;

  std::size_t total_steps() const { return max_steps != 0 ? max_steps : total_epochs * steps_per_epoch; }

  void validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("train: base_lr must be positive");
    if (halving_period_epochs == 0 || steps_per_epoch == 0) {
      throw ConfigError("train: halving_period_epochs and steps_per_epoch must be positive");
    }
    if (total_steps() == 0) throw ConfigError("train: no steps to run");
    if (batch_size == 0 || crop == 0) throw ConfigError("train: batch_size and crop must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("train: adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("train: adam_eps must be positive");
    if (!(grad_clip >= 0.0)) throw ConfigError("train: grad_clip must be >= 0");
    if (blind && !(sigma_min >= 0.0 && sigma_max >= sigma_min)) throw ConfigError("train: bad blind sigma range");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// base_lr * 0.5^floor(epoch / halving_period_epochs).
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  const auto halvings = static_cast<int>(epoch / cfg.halving_period_epochs);
  return std::ldexp(cfg.base_lr, -halvings);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamSettings {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update of `param` in place. `step` counts from 1.
inline void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, const AdamSettings& s,
                        std::uint64_t step) {
  if (step == 0) throw ContractError("adam: step counts from 1");
  if (grad.shape() != param.shape() || m.shape() != param.shape() || v.shape() != param.shape()) {
    throw ShapeError("adam: parameter " + shape_str(param.shape()) + " and gradient " + shape_str(grad.shape()) +
                     " shapes differ");
  }
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.numel(); ++i) {
    const double g = grad[i];
    const double mi = s.beta1 * m[i] + (1.0 - s.beta1) * g;
    const double vi = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
    m[i] = static_cast<real>(mi);
    v[i] = static_cast<real>(vi);
    param[i] = static_cast<real>(param[i] - s.lr * (mi / c1) / (std::sqrt(vi / c2) + s.eps));
  }
}

/// Adam over every parameter of a registry, using the gradients on the tape.
/// Moment buffers are created (zero) on first use.
inline void adam_step(std::vector<ParamTensor>& params, const AdamSettings& s, std::uint64_t step) {
  for (auto& p : params) {
    if (!p.has_moments()) {
      p.first_moment = Tensor(p.value.shape());
      p.second_moment = Tensor(p.value.shape());
    }
    const Tensor g = p.value.grad();
    adam_update(p.value.mutable_value(), g, p.first_moment, p.second_moment, s, step);
  }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_grad_norm(std::vector<ParamTensor>& params, double max_norm) {
  double sq = 0.0;
  for (auto& p : params) {
    if (!p.value.has_grad()) continue;
    for (real g : p.value.node()->grad.data()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params) {
      if (!p.value.has_grad()) continue;
      for (auto& v : p.value.node()->grad.data()) v = static_cast<real>(v * f);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Augmentation: the 8 symmetries of the square. Mode m rotates by (m % 4)
// quarter turns counter-clockwise, and modes 4..7 then flip left-right.

inline Tensor augment(const Tensor& t, int mode) {
  if (mode < 0 || mode > 7) throw ConfigError("augment: mode must lie in 0..7");
  require_rank(t, 4, "augment input");
  const std::size_t h = t.dim(2), w = t.dim(3);
  const int turns = mode % 4;
  const bool flip = mode >= 4;
  if (turns % 2 == 1 && h != w) throw ShapeError("augment: rotation needs a square patch, got " + shape_str(t.shape()));
  if (mode == 0) return t;
  Tensor out(t.shape());
  const std::size_t planes = t.dim(0) * t.dim(1);
  for (std::size_t p = 0; p < planes; ++p) {
    const real* src = t.ptr() + p * h * w;
    real* dst = out.ptr() + p * h * w;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        // Output pixel (i, j) after the optional flip came from (i, jj).
        const std::size_t jj = flip ? w - 1 - j : j;
        std::size_t si = i, sj = jj;
        switch (turns) {
          case 1: si = jj, sj = w - 1 - i; break;
          case 2: si = h - 1 - i, sj = w - 1 - jj; break;
          case 3: si = h - 1 - jj, sj = i; break;
          default: break;
        }
        dst[i * w + j] = src[si * w + sj];
      }
    }
  }
  return out;
}

/// Mode that undoes `mode`. Flipped modes are involutions.
inline int inverse_mode(int mode) {
  if (mode < 0 || mode > 7) throw ConfigError("augment: mode must lie in 0..7");
  return mode >= 4 ? mode : (4 - mode) % 4;
}

// ---------------------------------------------------------------------------
// Training loop

struct LossRecord {
  std::size_t step = 0;  // 1-based index of the optimizer step
  double lr = 0.0;
  double loss = 0.0;
};

/// Optimizer progress carried between runs; moments live in the model's
/// ParamTensors.
struct TrainState {
  std::uint64_t step = 0;  // optimizer steps completed
};

struct Batch {
  Tensor noisy;  // N x C x crop x crop on [0, 1]
  Tensor clean;
};

/// Copies a crop x crop window at (y, x) from a 1 x C x H x W image.
inline Tensor crop_window(const Tensor& image, std::size_t y, std::size_t x, std::size_t size) {
  const std::size_t c = image.dim(1), h = image.dim(2), w = image.dim(3);
  Tensor out(Shape{1, c, size, size});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < size; ++i) {
      const real* src = image.ptr() + (ch * h + y + i) * w + x;
      std::copy(src, src + size, out.ptr() + (ch * size + i) * size);
    }
  }
  return out;
}

/// Draws the batch for optimizer step `step` (0-based). Everything random is
/// taken from the stream keyed by (seed, step), so a batch depends only on
/// the dataset, the configs and the step index.
inline Batch sample_batch(const std::vector<Tensor>& dataset, const DegradationSpec& spec, const TrainConfig& cfg,
                          std::uint64_t step) {
  Rng rng(cfg.seed, step + 1);
  DegradationSpec active = spec;
  if (cfg.blind && spec.kind == DegradationKind::awgn) {
    active.sigma = cfg.sigma_min + (cfg.sigma_max - cfg.sigma_min) * rng.uniform();
  }
  const std::size_t c = dataset.front().dim(1), k = cfg.crop;
  Batch b{Tensor(Shape{cfg.batch_size, c, k, k}), Tensor(Shape{cfg.batch_size, c, k, k})};
  const std::size_t item = c * k * k;
  for (std::size_t n = 0; n < cfg.batch_size; ++n) {
    const Tensor& img = dataset[rng.below(dataset.size())];
    const std::size_t y = rng.below(img.dim(2) - k + 1), x = rng.below(img.dim(3) - k + 1);
    const int mode = cfg.augment ? static_cast<int>(rng.below(8)) : 0;
    const Tensor clean = augment(crop_window(img, y, x, k), mode);
    const Tensor noisy = degrade(clean, active, rng);
    for (std::size_t i = 0; i < item; ++i) {
      b.clean[n * item + i] = clean[i] / 255.0f;
      b.noisy[n * item + i] = noisy[i] / 255.0f;
    }
  }
  return b;
}

inline void check_dataset(const std::vector<Tensor>& dataset, const TrainConfig& cfg, std::size_t channels) {
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  for (const auto& img : dataset) {
    if (img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != channels) {
      throw ShapeError("train: dataset images must be 1 x " + std::to_string(channels) + " x H x W, got " +
                       shape_str(img.shape()));
    }
    if (img.dim(2) < cfg.crop || img.dim(3) < cfg.crop) {
      throw ConfigError("train: image " + shape_str(img.shape()) + " smaller than crop " + std::to_string(cfg.crop));
    }
  }
}

/// Called after every optimizer step with the completed step count.
using StepCallback = std::function<void(const LossRecord&, const TrainState&)>;

/// Runs optimizer steps state.step .. stop_step-1 (stop_step 0 means
/// cfg.total_steps()). Returns the loss of every step taken.
inline std::vector<LossRecord> train(ColaNet& model, const std::vector<Tensor>& dataset, const DegradationSpec& spec,
                                     const TrainConfig& cfg, TrainState& state, std::size_t stop_step = 0,
                                     const StepCallback& on_step = {}) {
  cfg.validate();
  spec.validate();
  check_dataset(dataset, cfg, model.config().in_channels);
  if (cfg.crop < model.config().patch_size) {
    throw ConfigError("train: crop " + std::to_string(cfg.crop) + " smaller than patch size");
  }
  const std::size_t end = stop_step == 0 ? cfg.total_steps() : stop_step;
  std::vector<LossRecord> curve;
  auto& params = model.weights().params();
  while (state.step < end) {
    const Batch batch = sample_batch(dataset, spec, cfg, state.step);
    model.weights().zero_grad();
    const Var pred = model.forward(Var(batch.noisy), NormMode::train).output;
    const Var loss = l2_loss(pred, Var(batch.clean));
    const double value = loss.value().item();
    if (!std::isfinite(value)) {
      std::ostringstream msg;
      msg << "train: non-finite loss " << value << " at step " << state.step + 1;
      throw NumericError(msg.str());
    }
    backward(loss);
    if (cfg.grad_clip > 0.0) clip_grad_norm(params, cfg.grad_clip);
    const double lr = lr_at(state.step / cfg.steps_per_epoch, cfg);
    adam_step(params, AdamSettings{lr, cfg.beta1, cfg.beta2, cfg.adam_eps}, state.step + 1);
    ++state.step;
    const LossRecord rec{state.step, lr, value};
    curve.push_back(rec);
    if (on_step) on_step(rec, state);
  }
  return curve;
}

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
