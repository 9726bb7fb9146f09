#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "colanet/autograd.hpp"
#include "colanet/kernels.hpp"
#include "colanet/tensor.hpp"

// Differentiable primitives. Each op computes its value eagerly and records
// an adjoint closure on the tape when any input requires a gradient.
namespace colanet {
inline namespace COLANET_PRECISION_NS {

enum class Activation { relu, sigmoid };
enum class NormMode { train, infer };

namespace detail {

inline std::span<const real> out_grad(const Node& self) { return self.grad.data(); }

inline Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

inline void require_same_shape(const Var& a, const Var& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and reductions

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return detail::record(std::move(out), {a, b}, [](detail::Node& self) {
    detail::accumulate(detail::input(self, 0), detail::out_grad(self));
    detail::accumulate(detail::input(self, 1), detail::out_grad(self));
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return detail::record(std::move(out), {a, b}, [](detail::Node& self) {
    detail::accumulate(detail::input(self, 0), detail::out_grad(self));
    std::vector<real> neg(self.grad.data().begin(), self.grad.data().end());
    for (auto& v : neg) v = -v;
    detail::accumulate(detail::input(self, 1), neg);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return detail::record(std::move(out), {a, b}, [](detail::Node& self) {
    auto& na = detail::input(self, 0);
    auto& nb = detail::input(self, 1);
    const auto g = detail::out_grad(self);
    std::vector<real> ga(g.size()), gb(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * nb.value[i];
      gb[i] = g[i] * na.value[i];
    }
    detail::accumulate(na, ga);
    detail::accumulate(nb, gb);
  });
}

inline Var scale(const Var& a, real s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return detail::record(std::move(out), {a}, [s](detail::Node& self) {
    std::vector<real> g(self.grad.data().begin(), self.grad.data().end());
    for (auto& v : g) v *= s;
    detail::accumulate(detail::input(self, 0), g);
  });
}

inline Var sum(const Var& a) {
  double acc = 0.0;
  for (real v : a.value().data()) acc += v;
  return detail::record(Tensor::scalar(static_cast<real>(acc)), {a}, [](detail::Node& self) {
    auto& in = detail::input(self, 0);
    std::vector<real> g(in.value.numel(), self.grad[0]);
    detail::accumulate(in, g);
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0f / static_cast<real>(a.value().numel())); }

/// Per-element mean squared error.
inline Var mse_loss(const Var& pred, const Var& target) {
  detail::require_same_shape(pred, target, "mse_loss");
  const auto n = pred.value().numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred.value()[i]) - target.value()[i];
    acc += d * d;
  }
  return detail::record(Tensor::scalar(static_cast<real>(acc / static_cast<double>(n))), {pred, target},
                        [n](detail::Node& self) {
                          auto& p = detail::input(self, 0);
                          auto& t = detail::input(self, 1);
                          const real k = 2.0f * self.grad[0] / static_cast<real>(n);
                          std::vector<real> gp(n), gt(n);
                          for (std::size_t i = 0; i < n; ++i) {
                            gp[i] = k * (p.value[i] - t.value[i]);
                            gt[i] = -gp[i];
                          }
                          detail::accumulate(p, gp);
                          detail::accumulate(t, gt);
                        });
}

namespace detail {
// When set, relu appends the sign of every input it sees (grad_check uses it
// to detect perturbations that cross a kink).
inline thread_local std::vector<bool>* relu_signs = nullptr;
}  // namespace detail

inline Var activate(const Var& x, Activation kind) {
  Tensor out = x.value();
  if (kind == Activation::relu) {
    if (detail::relu_signs) {
      for (real v : out.data()) detail::relu_signs->push_back(v > 0.0f);
    }
    for (auto& v : out.data()) v = v > 0.0f ? v : 0.0f;
    return detail::record(std::move(out), {x}, [](detail::Node& self) {
      auto& in = detail::input(self, 0);
      std::vector<real> g(self.grad.data().begin(), self.grad.data().end());
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (!(in.value[i] > 0.0f)) g[i] = 0.0f;
      }
      detail::accumulate(in, g);
    });
  }
  for (auto& v : out.data()) v = 1.0f / (1.0f + std::exp(-v));
  return detail::record(std::move(out), {x}, [](detail::Node& self) {
    std::vector<real> g(self.grad.data().begin(), self.grad.data().end());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const real y = self.value[i];
      g[i] *= y * (1.0f - y);
    }
    detail::accumulate(detail::input(self, 0), g);
  });
}

inline Var relu(const Var& x) { return activate(x, Activation::relu); }
inline Var sigmoid(const Var& x) { return activate(x, Activation::sigmoid); }

// ---------------------------------------------------------------------------
// Convolution

/// Stride-1 zero-padded cross-correlation. `groups` splits input and output
/// channels into independent blocks (groups = 1 is a dense convolution).
inline Var conv2d(const Var& input, const Var& weight, const Var& bias, std::size_t pad,
                  std::size_t groups = 1) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  require_rank(x, 4, "conv2d input");
  require_rank(w, 4, "conv2d weight");
  const std::size_t k = w.dim(2);
  if (w.dim(3) != k) throw ConfigError("conv2d: kernel must be square, got " + shape_str(w.shape()));
  if (k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (groups == 0) throw ConfigError("conv2d: groups must be positive");
  const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t cout = w.dim(0);
  if (cin % groups != 0 || cout % groups != 0 || w.dim(1) * groups != cin) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(w.shape()) + " at groups=" + std::to_string(groups));
  }
  require_shape(bias.value(), Shape{cout}, "conv2d bias");
  if (h + 2 * pad < k || wd + 2 * pad < k) throw ShapeError("conv2d: kernel larger than padded input");
  const std::size_t ho = h + 2 * pad - k + 1, wo = wd + 2 * pad - k + 1;
  const std::size_t cg = cin / groups, og = cout / groups;
  const std::size_t kg = cg * k * k, p = ho * wo;
  const bool direct = (k == 1 && pad == 0);

  Tensor out(Shape{n, cout, ho, wo});
  std::vector<real> cols(direct ? 0 : kg * p);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t g = 0; g < groups; ++g) {
      const real* img = x.ptr() + (b * cin + g * cg) * h * wd;
      const real* col = img;
      if (!direct) {
        kernels::im2col(img, cg, h, wd, k, pad, ho, wo, cols.data());
        col = cols.data();
      }
      real* dst = out.ptr() + (b * cout + g * og) * p;
      for (std::size_t o = 0; o < og; ++o) std::fill(dst + o * p, dst + (o + 1) * p, bias.value()[g * og + o]);
      kernels::gemm_nn(w.ptr() + g * og * kg, col, dst, og, kg, p);
    }
  }

  return detail::record(std::move(out), {input, weight, bias},
                        [=](detail::Node& self) {
                          auto& nx = detail::input(self, 0);
                          auto& nw = detail::input(self, 1);
                          auto& nb = detail::input(self, 2);
                          const real* dout = self.grad.ptr();
                          std::vector<real> col_buf(direct ? 0 : kg * p);
                          std::vector<real> dcol(kg * p);
                          Tensor dw(nw.value.shape());
                          std::vector<real> db(cout, 0.0f);
                          Tensor dx(nx.value.shape());
                          for (std::size_t b = 0; b < n; ++b) {
                            for (std::size_t g = 0; g < groups; ++g) {
                              const real* go = dout + (b * cout + g * og) * p;
                              for (std::size_t o = 0; o < og; ++o) {
                                double s = 0.0;
                                for (std::size_t i = 0; i < p; ++i) s += go[o * p + i];
                                db[g * og + o] += static_cast<real>(s);
                              }
                              if (nw.requires_grad) {
                                const real* img = nx.value.ptr() + (b * cin + g * cg) * h * wd;
                                const real* col = img;
                                if (!direct) {
                                  kernels::im2col(img, cg, h, wd, k, pad, ho, wo, col_buf.data());
                                  col = col_buf.data();
                                }
                                kernels::gemm_nt(go, col, dw.ptr() + g * og * kg, og, p, kg);
                              }
                              if (nx.requires_grad) {
                                std::fill(dcol.begin(), dcol.end(), 0.0f);
                                kernels::gemm_tn(nw.value.ptr() + g * og * kg, go, dcol.data(), kg, og, p);
                                real* dimg = dx.ptr() + (b * cin + g * cg) * h * wd;
                                if (direct) {
                                  for (std::size_t i = 0; i < kg * p; ++i) dimg[i] += dcol[i];
                                } else {
                                  kernels::col2im(dcol.data(), cg, h, wd, k, pad, ho, wo, dimg);
                                }
                              }
                            }
                          }
                          detail::accumulate(nx, dx.data());
                          detail::accumulate(nw, dw.data());
                          detail::accumulate(nb, db);
                        });
}

// ---------------------------------------------------------------------------
// Batch normalization

/// Per-channel normalization. Train mode normalizes with batch statistics
/// (biased variance) and folds them into the running buffers by exponential
/// moving average (unbiased variance, as the running estimate).
inline Var batch_norm(const Var& input, const Var& gamma, const Var& beta, Tensor& running_mean,
                      Tensor& running_var, NormMode mode, real eps = 1e-5f, real momentum = 0.1f) {
  const Tensor& x = input.value();
  require_rank(x, 4, "batch_norm input");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require_shape(gamma.value(), Shape{c}, "batch_norm gamma");
  require_shape(beta.value(), Shape{c}, "batch_norm beta");
  require_shape(running_mean, Shape{c}, "batch_norm running_mean");
  require_shape(running_var, Shape{c}, "batch_norm running_var");
  if (!(eps > 0.0f)) throw ConfigError("batch_norm: eps must be positive");
  if (momentum < 0.0f || momentum > 1.0f) throw ConfigError("batch_norm: momentum outside [0,1]");
  const std::size_t count = n * hw;
  if (mode == NormMode::train && count < 2) {
    throw NumericError("batch_norm: degenerate statistics, need at least 2 values per channel in train mode");
  }

  std::vector<real> mu(c), inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    if (mode == NormMode::train) {
      double s = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const real* p = x.ptr() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
      }
      const double m = s / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const real* p = x.ptr() + (b * c + ch) * hw;
        for (std::size_t i = 0; i < hw; ++i) sq += (p[i] - m) * (p[i] - m);
      }
      const double var = sq / static_cast<double>(count);
      mu[ch] = static_cast<real>(m);
      inv_std[ch] = static_cast<real>(1.0 / std::sqrt(var + eps));
      const double unbiased = sq / static_cast<double>(count - 1);
      running_mean[ch] = (1.0f - momentum) * running_mean[ch] + momentum * static_cast<real>(m);
      running_var[ch] = (1.0f - momentum) * running_var[ch] + momentum * static_cast<real>(unbiased);
    } else {
      mu[ch] = running_mean[ch];
      inv_std[ch] = static_cast<real>(1.0 / std::sqrt(static_cast<double>(running_var[ch]) + eps));
    }
  }

  Tensor out(x.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const real* p = x.ptr() + (b * c + ch) * hw;
      real* q = out.ptr() + (b * c + ch) * hw;
      const real gm = gamma.value()[ch], bt = beta.value()[ch];
      for (std::size_t i = 0; i < hw; ++i) q[i] = gm * ((p[i] - mu[ch]) * inv_std[ch]) + bt;
    }
  }

  return detail::record(std::move(out), {input, gamma, beta},
                        [=](detail::Node& self) {
                          auto& nx = detail::input(self, 0);
                          auto& ng = detail::input(self, 1);
                          auto& nbeta = detail::input(self, 2);
                          const real* dy = self.grad.ptr();
                          const real* xv = nx.value.ptr();
                          Tensor dx(nx.value.shape());
                          std::vector<real> dg(c), db(c);
                          for (std::size_t ch = 0; ch < c; ++ch) {
                            double sdy = 0.0, sdyx = 0.0;
                            for (std::size_t b = 0; b < n; ++b) {
                              const std::size_t off = (b * c + ch) * hw;
                              for (std::size_t i = 0; i < hw; ++i) {
                                const double xh = (xv[off + i] - mu[ch]) * inv_std[ch];
                                sdy += dy[off + i];
                                sdyx += dy[off + i] * xh;
                              }
                            }
                            dg[ch] = static_cast<real>(sdyx);
                            db[ch] = static_cast<real>(sdy);
                            const double gm = ng.value[ch];
                            const double mdy = sdy / static_cast<double>(count);
                            const double mdyx = sdyx / static_cast<double>(count);
                            for (std::size_t b = 0; b < n; ++b) {
                              const std::size_t off = (b * c + ch) * hw;
                              for (std::size_t i = 0; i < hw; ++i) {
                                if (mode == NormMode::train) {
                                  const double xh = (xv[off + i] - mu[ch]) * inv_std[ch];
                                  dx[off + i] = static_cast<real>(gm * inv_std[ch] * (dy[off + i] - mdy - xh * mdyx));
                                } else {
                                  dx[off + i] = static_cast<real>(gm * inv_std[ch] * dy[off + i]);
                                }
                              }
                            }
                          }
                          detail::accumulate(nx, dx.data());
                          detail::accumulate(ng, dg);
                          detail::accumulate(nbeta, db);
                        });
}

// ---------------------------------------------------------------------------
// Dense algebra

/// a (m x k) times b (k x n).
inline Var matmul(const Var& a, const Var& b) {
  require_rank(a.value(), 2, "matmul lhs");
  require_rank(b.value(), 2, "matmul rhs");
  const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  }
  Tensor out(Shape{m, n});
  kernels::gemm_nn(a.value().ptr(), b.value().ptr(), out.ptr(), m, k, n);
  return detail::record(std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& na = detail::input(self, 0);
    auto& nb = detail::input(self, 1);
    if (na.requires_grad) {
      Tensor da(Shape{m, k});
      kernels::gemm_nt(self.grad.ptr(), nb.value.ptr(), da.ptr(), m, n, k);
      detail::accumulate(na, da.data());
    }
    if (nb.requires_grad) {
      Tensor db(Shape{k, n});
      kernels::gemm_tn(na.value.ptr(), self.grad.ptr(), db.ptr(), k, m, n);
      detail::accumulate(nb, db.data());
    }
  });
}

/// a (m x k) times b^T where b is (n x k).
inline Var matmul_nt(const Var& a, const Var& b) {
  require_rank(a.value(), 2, "matmul_nt lhs");
  require_rank(b.value(), 2, "matmul_nt rhs");
  const std::size_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(0);
  if (b.value().dim(1) != k) {
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_str(a.shape()) + " * " +
                     shape_str(b.shape()) + "^T");
  }
  Tensor out(Shape{m, n});
  kernels::gemm_nt(a.value().ptr(), b.value().ptr(), out.ptr(), m, k, n);
  return detail::record(std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    auto& na = detail::input(self, 0);
    auto& nb = detail::input(self, 1);
    if (na.requires_grad) {
      Tensor da(Shape{m, k});
      kernels::gemm_nn(self.grad.ptr(), nb.value.ptr(), da.ptr(), m, n, k);
      detail::accumulate(na, da.data());
    }
    if (nb.requires_grad) {
      Tensor db(Shape{n, k});
      kernels::gemm_tn(self.grad.ptr(), na.value.ptr(), db.ptr(), n, m, k);
      detail::accumulate(nb, db.data());
    }
  });
}

/// Affine map x W^T + b for x (N x Din), W (Dout x Din), b (Dout).
inline Var linear(const Var& input, const Var& weight, const Var& bias) {
  require_rank(input.value(), 2, "linear input");
  require_rank(weight.value(), 2, "linear weight");
  const std::size_t n = input.value().dim(0), din = input.value().dim(1), dout = weight.value().dim(0);
  if (weight.value().dim(1) != din) {
    throw ShapeError("linear: input " + shape_str(input.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  require_shape(bias.value(), Shape{dout}, "linear bias");
  Tensor out(Shape{n, dout});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < dout; ++j) out[i * dout + j] = bias.value()[j];
  }
  kernels::gemm_nt(input.value().ptr(), weight.value().ptr(), out.ptr(), n, din, dout);
  return detail::record(std::move(out), {input, weight, bias}, [n, din, dout](detail::Node& self) {
    auto& nx = detail::input(self, 0);
    auto& nw = detail::input(self, 1);
    auto& nb = detail::input(self, 2);
    if (nx.requires_grad) {
      Tensor dx(Shape{n, din});
      kernels::gemm_nn(self.grad.ptr(), nw.value.ptr(), dx.ptr(), n, dout, din);
      detail::accumulate(nx, dx.data());
    }
    if (nw.requires_grad) {
      Tensor dw(Shape{dout, din});
      kernels::gemm_tn(self.grad.ptr(), nx.value.ptr(), dw.ptr(), dout, n, din);
      detail::accumulate(nw, dw.data());
    }
    std::vector<real> db(dout, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dout; ++j) db[j] += self.grad[i * dout + j];
    }
    detail::accumulate(nb, db);
  });
}

// ---------------------------------------------------------------------------
// Softmax and pooling

/// Numerically stable softmax along `axis`.
inline Var softmax(const Var& input, std::size_t axis) {
  const Tensor& x = input.value();
  if (axis >= x.rank()) throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  const std::size_t len = x.dim(axis);
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Tensor out(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      real mx = -std::numeric_limits<real>::infinity();
      for (std::size_t l = 0; l < len; ++l) mx = std::max(mx, x[base + l * inner]);
      double s = 0.0;
      for (std::size_t l = 0; l < len; ++l) {
        const real e = std::exp(x[base + l * inner] - mx);
        out[base + l * inner] = e;
        s += e;
      }
      const real inv = static_cast<real>(1.0 / s);
      for (std::size_t l = 0; l < len; ++l) out[base + l * inner] *= inv;
    }
  }
  return detail::record(std::move(out), {input}, [outer, inner, len](detail::Node& self) {
    std::vector<real> dx(self.value.numel());
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dotp = 0.0;
        for (std::size_t l = 0; l < len; ++l) {
          dotp += static_cast<double>(self.grad[base + l * inner]) * self.value[base + l * inner];
        }
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t i = base + l * inner;
          dx[i] = static_cast<real>(self.value[i] * (self.grad[i] - dotp));
        }
      }
    }
    detail::accumulate(detail::input(self, 0), dx);
  });
}

/// Spatial mean: N x C x H x W -> N x C.
inline Var global_avg_pool(const Var& input) {
  const Tensor& x = input.value();
  require_rank(x, 4, "global_avg_pool input");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out(Shape{n, c});
  for (std::size_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < hw; ++j) s += x[i * hw + j];
    out[i] = static_cast<real>(s / static_cast<double>(hw));
  }
  return detail::record(std::move(out), {input}, [n, c, hw](detail::Node& self) {
    std::vector<real> dx(n * c * hw);
    const real inv = 1.0f / static_cast<real>(hw);
    for (std::size_t i = 0; i < n * c; ++i) {
      std::fill(dx.begin() + static_cast<std::ptrdiff_t>(i * hw),
                dx.begin() + static_cast<std::ptrdiff_t>((i + 1) * hw), self.grad[i] * inv);
    }
    detail::accumulate(detail::input(self, 0), dx);
  });
}

/// Multiplies each channel plane of x (N x C x H x W) by s[n, c] (N x C).
inline Var scale_channels(const Var& input, const Var& scales) {
  const Tensor& x = input.value();
  require_rank(x, 4, "scale_channels input");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  require_shape(scales.value(), Shape{n, c}, "scale_channels scales");
  Tensor out(x.shape());
  for (std::size_t i = 0; i < n * c; ++i) {
    const real s = scales.value()[i];
    for (std::size_t j = 0; j < hw; ++j) out[i * hw + j] = x[i * hw + j] * s;
  }
  return detail::record(std::move(out), {input, scales}, [n, c, hw](detail::Node& self) {
    auto& nx = detail::input(self, 0);
    auto& ns = detail::input(self, 1);
    std::vector<real> dx(n * c * hw), ds(n * c);
    for (std::size_t i = 0; i < n * c; ++i) {
      const real s = ns.value[i];
      double acc = 0.0;
      for (std::size_t j = 0; j < hw; ++j) {
        const real g = self.grad[i * hw + j];
        dx[i * hw + j] = g * s;
        acc += static_cast<double>(g) * nx.value[i * hw + j];
      }
      ds[i] = static_cast<real>(acc);
    }
    detail::accumulate(nx, dx);
    detail::accumulate(ns, ds);
  });
}

// ---------------------------------------------------------------------------
// Layout ops

/// Stacks two equal-shape tensors along a new trailing axis of length 2.
inline Var stack_pair(const Var& a, const Var& b) {
  detail::require_same_shape(a, b, "stack_pair");
  Shape s = a.shape();
  if (s.size() >= 4) throw ShapeError("stack_pair: result would exceed rank 4");
  s.push_back(2);
  const std::size_t m = a.value().numel();
  Tensor out(s);
  for (std::size_t i = 0; i < m; ++i) {
    out[2 * i] = a.value()[i];
    out[2 * i + 1] = b.value()[i];
  }
  return detail::record(std::move(out), {a, b}, [m](detail::Node& self) {
    std::vector<real> ga(m), gb(m);
    for (std::size_t i = 0; i < m; ++i) {
      ga[i] = self.grad[2 * i];
      gb[i] = self.grad[2 * i + 1];
    }
    detail::accumulate(detail::input(self, 0), ga);
    detail::accumulate(detail::input(self, 1), gb);
  });
}

/// Selects index `k` of the trailing axis, dropping it.
inline Var take_last(const Var& x, std::size_t k) {
  Shape s = x.shape();
  if (s.size() < 2) throw ShapeError("take_last: needs rank >= 2");
  const std::size_t len = s.back();
  if (k >= len) throw ShapeError("take_last: index out of range");
  s.pop_back();
  const std::size_t m = shape_numel(s);
  Tensor out(s);
  for (std::size_t i = 0; i < m; ++i) out[i] = x.value()[i * len + k];
  return detail::record(std::move(out), {x}, [m, len, k](detail::Node& self) {
    std::vector<real> g(m * len, 0.0f);
    for (std::size_t i = 0; i < m; ++i) g[i * len + k] = self.grad[i];
    detail::accumulate(detail::input(self, 0), g);
  });
}

/// Batch item `index` of a rank-4 tensor, kept as 1 x C x H x W.
inline Var slice_batch(const Var& x, std::size_t index) {
  require_rank(x.value(), 4, "slice_batch input");
  const Shape& s = x.shape();
  if (index >= s[0]) throw ShapeError("slice_batch: index out of range");
  const std::size_t item = s[1] * s[2] * s[3];
  const auto first = x.value().data().begin() + static_cast<std::ptrdiff_t>(index * item);
  Tensor out(Shape{1, s[1], s[2], s[3]}, std::vector<real>(first, first + static_cast<std::ptrdiff_t>(item)));
  const std::size_t total = x.value().numel();
  return detail::record(std::move(out), {x}, [index, item, total](detail::Node& self) {
    std::vector<real> g(total, 0.0f);
    std::copy(self.grad.data().begin(), self.grad.data().end(),
              g.begin() + static_cast<std::ptrdiff_t>(index * item));
    detail::accumulate(detail::input(self, 0), g);
  });
}

/// Concatenates 1 x C x H x W items along the batch axis.
inline Var concat_batch(const std::vector<Var>& items) {
  if (items.empty()) throw ShapeError("concat_batch: no items");
  Shape s = items.front().shape();
  require_rank(items.front().value(), 4, "concat_batch item");
  std::size_t total_n = 0;
  for (const auto& it : items) {
    const Shape& t = it.shape();
    if (t.size() != 4 || t[1] != s[1] || t[2] != s[2] || t[3] != s[3]) {
      throw ShapeError("concat_batch: inconsistent item shapes");
    }
    total_n += t[0];
  }
  s[0] = total_n;
  std::vector<real> data;
  data.reserve(shape_numel(s));
  for (const auto& it : items) data.insert(data.end(), it.value().data().begin(), it.value().data().end());
  return detail::record(Tensor(s, std::move(data)), items, [](detail::Node& self) {
    std::size_t off = 0;
    for (auto& in : self.inputs) {
      const std::size_t m = in->value.numel();
      detail::accumulate(*in, self.grad.data().subspan(off, m));
      off += m;
    }
  });
}

namespace detail {

/// Mirror index for any offset (period 2*(n-1)); n == 1 maps everything to 0.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  std::ptrdiff_t r = i % period;
  if (r < 0) r += period;
  if (r >= static_cast<std::ptrdiff_t>(n)) r = period - r;
  return static_cast<std::size_t>(r);
}

}  // namespace detail

/// Reflect-pads the bottom and right edges of an N x C x H x W tensor.
inline Var pad_reflect(const Var& x, std::size_t bottom, std::size_t right) {
  require_rank(x.value(), 4, "pad_reflect input");
  if (bottom == 0 && right == 0) return x;
  const Shape& s = x.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  const std::size_t ho = h + bottom, wo = w + right;
  std::vector<std::size_t> src(ho * wo);
  for (std::size_t i = 0; i < ho; ++i) {
    for (std::size_t j = 0; j < wo; ++j) {
      src[i * wo + j] = detail::reflect_index(static_cast<std::ptrdiff_t>(i), h) * w +
                        detail::reflect_index(static_cast<std::ptrdiff_t>(j), w);
    }
  }
  Tensor out(Shape{n, c, ho, wo});
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t i = 0; i < ho * wo; ++i) out[p * ho * wo + i] = x.value()[p * h * w + src[i]];
  }
  return detail::record(std::move(out), {x}, [n, c, h, w, ho, wo, src](detail::Node& self) {
    std::vector<real> g(n * c * h * w, 0.0f);
    for (std::size_t p = 0; p < n * c; ++p) {
      for (std::size_t i = 0; i < ho * wo; ++i) g[p * h * w + src[i]] += self.grad[p * ho * wo + i];
    }
    detail::accumulate(detail::input(self, 0), g);
  });
}

/// Keeps the top-left h x w window of an N x C x H x W tensor.
inline Var crop(const Var& x, std::size_t h, std::size_t w) {
  require_rank(x.value(), 4, "crop input");
  const Shape& s = x.shape();
  if (h > s[2] || w > s[3]) throw ShapeError("crop: window larger than input");
  if (h == s[2] && w == s[3]) return x;
  const std::size_t nc = s[0] * s[1], hi = s[2], wi = s[3];
  Tensor out(Shape{s[0], s[1], h, w});
  for (std::size_t p = 0; p < nc; ++p) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) out[(p * h + i) * w + j] = x.value()[(p * hi + i) * wi + j];
    }
  }
  return detail::record(std::move(out), {x}, [nc, hi, wi, h, w](detail::Node& self) {
    std::vector<real> g(nc * hi * wi, 0.0f);
    for (std::size_t p = 0; p < nc; ++p) {
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) g[(p * hi + i) * wi + j] = self.grad[(p * h + i) * w + j];
      }
    }
    detail::accumulate(detail::input(self, 0), g);
  });
}

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
