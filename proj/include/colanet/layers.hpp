#pragma once

#include <cmath>
#include <cstddef>

#include "colanet/ops.hpp"
#include "colanet/rng.hpp"

// Parameter bundles for the layer types the network is built from, with
// fan-in scaled Gaussian initialization (std = sqrt(2 / fan_in), zero bias).
namespace colanet {
inline namespace COLANET_PRECISION_NS {

struct ConvParams {
  Var weight;  // Cout x Cin/groups x k x k
  Var bias;    // Cout
  std::size_t pad = 0;
  std::size_t groups = 1;
};

struct LinearParams {
  Var weight;  // Dout x Din
  Var bias;    // Dout
};

struct BatchNormParams {
  Var gamma;
  Var beta;
  // Running statistics are buffers: Vars that never require a gradient, so
  // that copies of the bundle share them.
  Var running_mean;
  Var running_var;
};

inline Tensor gaussian_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<real>(rng.normal() * stddev);
  return t;
}

inline ConvParams make_conv(std::size_t cout, std::size_t cin, std::size_t k, std::size_t groups, Rng& rng) {
  if (k % 2 == 0) throw ConfigError("conv kernel size must be odd");
  if (groups == 0 || cin % groups != 0 || cout % groups != 0) {
    throw ConfigError("conv groups must divide both channel counts");
  }
  const std::size_t fan_in = cin / groups * k * k;
  return ConvParams{Var(gaussian_tensor(Shape{cout, cin / groups, k, k}, std::sqrt(2.0 / fan_in), rng), true),
                    Var(Tensor(Shape{cout}), true), (k - 1) / 2, groups};
}

inline LinearParams make_linear(std::size_t dout, std::size_t din, Rng& rng) {
  return LinearParams{Var(gaussian_tensor(Shape{dout, din}, std::sqrt(2.0 / din), rng), true),
                      Var(Tensor(Shape{dout}), true)};
}

inline BatchNormParams make_batch_norm(std::size_t c) {
  return BatchNormParams{Var(Tensor(Shape{c}, 1.0f), true), Var(Tensor(Shape{c}), true),
                         Var(Tensor(Shape{c}, 0.0f)), Var(Tensor(Shape{c}, 1.0f))};
}

inline Var apply(const ConvParams& p, const Var& x) { return conv2d(x, p.weight, p.bias, p.pad, p.groups); }

inline Var apply(const LinearParams& p, const Var& x) { return linear(x, p.weight, p.bias); }

inline Var apply(BatchNormParams& p, const Var& x, NormMode mode, real eps, real momentum) {
  return batch_norm(x, p.gamma, p.beta, p.running_mean.mutable_value(), p.running_var.mutable_value(), mode, eps,
                    momentum);
}

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
