#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "colanet/tensor.hpp"

namespace colanet {
inline namespace COLANET_PRECISION_NS {

/// PSNR in dB over all elements jointly; +infinity when the inputs are equal.
inline double psnr(const Tensor& a, const Tensor& b, double peak = 255.0) {
  if (a.shape() != b.shape()) {
    throw ShapeError("psnr: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  if (!(peak > 0.0)) throw ConfigError("psnr: peak must be positive");
  double se = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / (se / static_cast<double>(a.numel())));
}

namespace detail {

inline std::array<double, 11> ssim_window() {
  std::array<double, 11> g{};
  double s = 0.0;
  for (int i = 0; i < 11; ++i) s += g[i] = std::exp(-((i - 5) * (i - 5)) / (2.0 * 1.5 * 1.5));
  for (auto& v : g) v /= s;
  return g;
}

// Separable 'valid' filtering of an h x w plane with the 11-tap window.
inline std::vector<double> filter_valid(const std::vector<double>& x, std::size_t h, std::size_t w) {
  static const auto g = ssim_window();
  const std::size_t ho = h - 10, wo = w - 10;
  std::vector<double> rows(h * wo), out(ho * wo);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < wo; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 11; ++k) s += g[k] * x[i * w + j + k];
      rows[i * wo + j] = s;
    }
  }
  for (std::size_t i = 0; i < ho; ++i) {
    for (std::size_t j = 0; j < wo; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 11; ++k) s += g[k] * rows[(i + k) * wo + j];
      out[i * wo + j] = s;
    }
  }
  return out;
}

// One plane per batch item: the single channel, or luma (BT.601) of RGB.
inline std::vector<double> ssim_plane(const Tensor& t, std::size_t n) {
  const std::size_t c = t.dim(1), plane = t.dim(2) * t.dim(3);
  std::vector<double> p(plane);
  const real* base = t.ptr() + n * c * plane;
  for (std::size_t i = 0; i < plane; ++i) {
    p[i] = c == 1 ? base[i] : 0.299 * base[i] + 0.587 * base[plane + i] + 0.114 * base[2 * plane + i];
  }
  return p;
}

inline double ssim_single(const std::vector<double>& x, const std::vector<double>& y, std::size_t h, std::size_t w,
                          double peak) {
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w), my = filter_valid(y, h, w);
  const auto sxx = filter_valid(xx, h, w), syy = filter_valid(yy, h, w), sxy = filter_valid(xy, h, w);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

}  // namespace detail

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5) and valid
/// borders. RGB inputs are compared on luma; batches are averaged.
inline double ssim(const Tensor& a, const Tensor& b, double peak = 255.0) {
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  require_rank(a, 4, "ssim input");
  if (a.dim(1) != 1 && a.dim(1) != 3) throw ShapeError("ssim: expected 1 or 3 channels, got " + shape_str(a.shape()));
  const std::size_t h = a.dim(2), w = a.dim(3);
  if (h < 11 || w < 11) throw ShapeError("ssim: image " + shape_str(a.shape()) + " smaller than the 11x11 window");
  double total = 0.0;
  for (std::size_t n = 0; n < a.dim(0); ++n) {
    total += detail::ssim_single(detail::ssim_plane(a, n), detail::ssim_plane(b, n), h, w, peak);
  }
  return total / static_cast<double>(a.dim(0));
}

struct ImageScore {
  std::string name;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<ImageScore> images;

  double mean_psnr() const {
    double s = 0.0;
    for (const auto& i : images) s += i.psnr_db;
    return images.empty() ? 0.0 : s / static_cast<double>(images.size());
  }
  double mean_ssim() const {
    double s = 0.0;
    for (const auto& i : images) s += i.ssim;
    return images.empty() ? 0.0 : s / static_cast<double>(images.size());
  }
};

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
