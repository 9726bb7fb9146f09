#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "colanet/autograd.hpp"
#include "colanet/ops.hpp"

namespace colanet {
inline namespace COLANET_PRECISION_NS {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "param#index analytic vs numeric" for diagnostics
  // Coordinates whose +-eps evaluations flip the sign of some relu input.
  std::size_t kink_crossings = 0;
  bool passed = false;
};

struct GradCheckOptions {
  double eps = 1e-3;
  double tol = 1e-3;
  // Coordinates checked per parameter; 0 checks all of them.
  std::size_t max_coords_per_param = 0;
};

namespace detail {

inline double objective_value(const Var& out) {
  double s = 0.0;
  for (real v : out.value().data()) s += v;
  return s;
}

struct SignRecorder {
  std::vector<bool> signs;
  std::vector<bool>* saved;
  SignRecorder() : saved(relu_signs) { relu_signs = &signs; }
  ~SignRecorder() { relu_signs = saved; }
  SignRecorder(const SignRecorder&) = delete;
  SignRecorder& operator=(const SignRecorder&) = delete;
};

inline double evaluate(const std::function<Var()>& f, std::vector<bool>& signs) {
  SignRecorder rec;
  const double v = objective_value(f());
  signs = std::move(rec.signs);
  return v;
}

}  // namespace detail

/// Compares reverse-mode gradients against central differences. The
/// objective is the sum of the elements `f` returns (a scalar, or an output
/// multiplied by a fixed projection). `f` must rebuild its graph from the
/// current parameter values on every call. Float builds cannot resolve small
/// gradients to 1e-3 relative error; tight checks run in a COLANET_REAL=double
/// build.
inline GradCheckReport grad_check(const std::function<Var()>& f, std::vector<Var> params,
                                  const GradCheckOptions& opt = {}) {
  if (opt.eps < 1e-4 || opt.eps > 1e-2) throw ConfigError("grad_check: eps must lie in [1e-4, 1e-2]");

  for (auto& p : params) p.zero_grad();
  Var out = f();
  if (!out.value().all_finite()) throw NumericError("grad_check: non-finite objective");
  backward(out.value().numel() == 1 ? out : sum(out));
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());

  GradCheckReport report;
  NoGradGuard no_grad;
  std::vector<bool> base, up_signs, down_signs;
  detail::evaluate(f, base);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& value = params[pi].mutable_value();
    const std::size_t n = value.numel();
    std::size_t step = 1;
    if (opt.max_coords_per_param != 0 && n > opt.max_coords_per_param) {
      step = (n + opt.max_coords_per_param - 1) / opt.max_coords_per_param;
    }
    for (std::size_t i = 0; i < n; i += step) {
      const real saved = value[i];
      value[i] = static_cast<real>(saved + opt.eps);
      const double up = detail::evaluate(f, up_signs);
      value[i] = static_cast<real>(saved - opt.eps);
      const double down = detail::evaluate(f, down_signs);
      value[i] = saved;
      if (up_signs != base || down_signs != base) ++report.kink_crossings;
      if (!std::isfinite(up) || !std::isfinite(down)) throw NumericError("grad_check: non-finite evaluation");
      // The perturbation actually representable, not the nominal eps.
      const double h = static_cast<double>(static_cast<real>(saved + opt.eps)) -
                       static_cast<double>(static_cast<real>(saved - opt.eps));
      const double numeric = (up - down) / h;
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max(1e-6, std::abs(a) + std::abs(numeric));
      ++report.coordinates;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = "param#" + std::to_string(pi) + "[" + std::to_string(i) + "] analytic " +
                       std::to_string(a) + " numeric " + std::to_string(numeric);
      }
    }
  }
  report.passed = report.max_rel_error <= opt.tol;
  return report;
}

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
