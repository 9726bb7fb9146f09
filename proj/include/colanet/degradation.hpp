#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "colanet/rng.hpp"
#include "colanet/tensor.hpp"

// Seeded corruption generators. Images live on the 0-255 scale unless noted.
namespace colanet {
inline namespace COLANET_PRECISION_NS {

enum class DegradationKind { awgn, hetero, jpeg };

inline const char* to_string(DegradationKind k) {
  switch (k) {
    case DegradationKind::awgn: return "awgn";
    case DegradationKind::hetero: return "hetero";
    case DegradationKind::jpeg: return "jpeg";
  }
  return "?";
}

inline DegradationKind parse_degradation_kind(const std::string& s) {
  if (s == "awgn") return DegradationKind::awgn;
  if (s == "hetero") return DegradationKind::hetero;
  if (s == "jpeg") return DegradationKind::jpeg;
  throw ConfigError("unknown degradation kind '" + s + "'");
}

struct DegradationSpec {
  DegradationKind kind = DegradationKind::awgn;
  double sigma = 25.0;     // awgn, 0-255 scale
  double sigma_s = 0.08;   // hetero, 0-1 scale
  double sigma_c = 0.03;   // hetero, 0-1 scale
  // When set, training draws sigma_s ~ U[0, sigma_s_max] and sigma_c ~
  // U[0, sigma_c_max] per sample instead of using the fixed values.
  bool hetero_random = false;
  double sigma_s_max = 0.16;
  double sigma_c_max = 0.06;
  int quality = 10;        // jpeg, 1-100
  std::uint64_t seed = 0;
  bool clip = false;       // clamp noisy outputs to the valid range

  void validate() const {
    if (!(sigma >= 0.0)) throw ConfigError("degradation: sigma must be >= 0");
    if (!(sigma_s >= 0.0) || !(sigma_c >= 0.0)) throw ConfigError("degradation: sigma_s, sigma_c must be >= 0");
    if (!(sigma_s_max >= 0.0) || !(sigma_c_max >= 0.0)) throw ConfigError("degradation: hetero ranges must be >= 0");
    if (quality < 1 || quality > 100) throw ConfigError("degradation: quality must lie in 1..100");
  }

  friend bool operator==(const DegradationSpec&, const DegradationSpec&) = default;
};

/// image + sigma * z, z ~ N(0, 1) per element.
inline Tensor add_awgn(const Tensor& image, double sigma, Rng& rng, bool clip = false) {
  if (!(sigma >= 0.0)) throw ConfigError("add_awgn: sigma must be >= 0");
  Tensor out = image;
  if (sigma == 0.0) return out;
  for (auto& v : out.data()) {
    const double y = v + sigma * rng.normal();
    v = static_cast<real>(clip ? std::clamp(y, 0.0, 255.0) : y);
  }
  return out;
}

/// Signal-dependent noise on a [0, 1] image: variance L * sigma_s^2 + sigma_c^2.
inline Tensor add_hetero_gaussian(const Tensor& image, double sigma_s, double sigma_c, Rng& rng, bool clip = false) {
  if (!(sigma_s >= 0.0) || !(sigma_c >= 0.0)) throw ConfigError("add_hetero_gaussian: parameters must be >= 0");
  Tensor out = image;
  if (sigma_s == 0.0 && sigma_c == 0.0) return out;
  const double vs = sigma_s * sigma_s, vc = sigma_c * sigma_c;
  for (auto& v : out.data()) {
    const double level = std::max(0.0, static_cast<double>(v));
    const double z = rng.normal();
    const double sd = std::sqrt(level * vs + vc);
    if (sd == 0.0) continue;
    const double y = v + sd * z;
    v = static_cast<real>(clip ? std::clamp(y, 0.0, 1.0) : y);
  }
  return out;
}

// ---------------------------------------------------------------------------
// JPEG-style blockwise DCT quantization

inline constexpr std::array<int, 64> kLuminanceTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

inline std::array<int, 64> quantization_table(int quality) {
  if (quality < 1 || quality > 100) throw ConfigError("jpeg: quality must lie in 1..100");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> t{};
  for (std::size_t i = 0; i < 64; ++i) t[i] = std::clamp((kLuminanceTable[i] * scale + 50) / 100, 1, 255);
  return t;
}

namespace detail {

// basis[u][x] = c(u) cos((2x + 1) u pi / 16), orthonormal.
inline const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> b{};
    for (int u = 0; u < 8; ++u) {
      const double c = u == 0 ? std::sqrt(0.125) : 0.5;
      for (int x = 0; x < 8; ++x) b[u][x] = c * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
    return b;
  }();
  return basis;
}

inline void dct8x8(const double* in, double* out) {
  const auto& b = dct_basis();
  double tmp[64];
  for (int y = 0; y < 8; ++y) {
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += b[u][x] * in[y * 8 + x];
      tmp[y * 8 + u] = s;
    }
  }
  for (int v = 0; v < 8; ++v) {
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += b[v][y] * tmp[y * 8 + u];
      out[v * 8 + u] = s;
    }
  }
}

inline void idct8x8(const double* in, double* out) {
  const auto& b = dct_basis();
  double tmp[64];
  for (int v = 0; v < 8; ++v) {
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += b[u][x] * in[v * 8 + u];
      tmp[v * 8 + x] = s;
    }
  }
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += b[v][y] * tmp[v * 8 + x];
      out[y * 8 + x] = s;
    }
  }
}

}  // namespace detail

/// Grayscale JPEG pixel pipeline: level shift, 8x8 DCT, quantize with the
/// quality-scaled luminance table, dequantize, inverse DCT, round, clamp.
/// Sizes that are not multiples of 8 are edge-replicated and cropped back.
/// `unit_table` replaces the table with ones (debug).
inline Tensor jpeg_degrade(const Tensor& image, int quality, bool unit_table = false) {
  require_rank(image, 4, "jpeg_degrade input");
  if (image.dim(0) != 1 || image.dim(1) != 1) {
    throw ShapeError("jpeg_degrade: expected a 1x1xHxW grayscale image, got " + shape_str(image.shape()));
  }
  std::array<int, 64> table = quantization_table(quality);
  if (unit_table) table.fill(1);
  const std::size_t h = image.dim(2), w = image.dim(3);
  const std::size_t hp = (h + 7) / 8 * 8, wp = (w + 7) / 8 * 8;
  Tensor out(image.shape());
  double block[64], coef[64];
  for (std::size_t by = 0; by < hp; by += 8) {
    for (std::size_t bx = 0; bx < wp; bx += 8) {
      for (std::size_t y = 0; y < 8; ++y) {
        for (std::size_t x = 0; x < 8; ++x) {
          const std::size_t sy = std::min(by + y, h - 1), sx = std::min(bx + x, w - 1);
          block[y * 8 + x] = static_cast<double>(image[sy * w + sx]) - 128.0;
        }
      }
      detail::dct8x8(block, coef);
      for (std::size_t i = 0; i < 64; ++i) coef[i] = std::round(coef[i] / table[i]) * table[i];
      detail::idct8x8(coef, block);
      for (std::size_t y = 0; y < 8 && by + y < h; ++y) {
        for (std::size_t x = 0; x < 8 && bx + x < w; ++x) {
          out[(by + y) * w + bx + x] = static_cast<real>(std::clamp(std::round(block[y * 8 + x] + 128.0), 0.0, 255.0));
        }
      }
    }
  }
  return out;
}

/// Applies `spec` to a 0-255 image. Hetero noise is applied on the 0-1 scale.
inline Tensor degrade(const Tensor& image, const DegradationSpec& spec, Rng& rng) {
  spec.validate();
  switch (spec.kind) {
    case DegradationKind::awgn:
      return add_awgn(image, spec.sigma, rng, spec.clip);
    case DegradationKind::hetero: {
      double ss = spec.sigma_s, sc = spec.sigma_c;
      if (spec.hetero_random) {
        ss = spec.sigma_s_max * rng.uniform();
        sc = spec.sigma_c_max * rng.uniform();
      }
      Tensor unit = image;
      for (auto& v : unit.data()) v /= 255.0f;
      Tensor noisy = add_hetero_gaussian(unit, ss, sc, rng, spec.clip);
      for (auto& v : noisy.data()) v *= 255.0f;
      return noisy;
    }
    case DegradationKind::jpeg: {
      require_rank(image, 4, "degrade input");
      if (image.dim(0) == 1 && image.dim(1) == 1) return jpeg_degrade(image, spec.quality);
      Tensor out(image.shape());
      const std::size_t plane = image.dim(2) * image.dim(3);
      for (std::size_t p = 0; p < image.dim(0) * image.dim(1); ++p) {
        Tensor one(Shape{1, 1, image.dim(2), image.dim(3)},
                   std::vector<real>(image.ptr() + p * plane, image.ptr() + (p + 1) * plane));
        const Tensor d = jpeg_degrade(one, spec.quality);
        std::copy(d.ptr(), d.ptr() + plane, out.ptr() + p * plane);
      }
      return out;
    }
  }
  return image;
}

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
