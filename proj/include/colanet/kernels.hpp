#pragma once

#include <algorithm>
#include <cstddef>

#include "colanet/precision.hpp"

// Raw single-threaded kernels shared by the differentiable ops.
namespace colanet {
inline namespace COLANET_PRECISION_NS {
namespace kernels {

/// C[m x n] += A * B[k x n] where A(i, p) = a[i * row_stride + p * col_stride].
/// Register-blocked: each 4 x 32 block of C is accumulated over all of k and
/// then added, so the summation order depends only on the shapes.
inline void gemm_blocked(const real* a, std::size_t row_stride, std::size_t col_stride, const real* b, real* c,
                         std::size_t m, std::size_t k, std::size_t n) {
  constexpr std::size_t kRows = 4, kCols = 32;
  for (std::size_t j0 = 0; j0 < n; j0 += kCols) {
    const std::size_t jn = std::min(kCols, n - j0);
    std::size_t i0 = 0;
    if (jn == kCols) {
      for (; i0 + kRows <= m; i0 += kRows) {
        real acc[kRows][kCols] = {};
        for (std::size_t p = 0; p < k; ++p) {
          const real* brow = b + p * n + j0;
          for (std::size_t r = 0; r < kRows; ++r) {
            const real ar = a[(i0 + r) * row_stride + p * col_stride];
            for (std::size_t j = 0; j < kCols; ++j) acc[r][j] += ar * brow[j];
          }
        }
        for (std::size_t r = 0; r < kRows; ++r) {
          real* crow = c + (i0 + r) * n + j0;
          for (std::size_t j = 0; j < kCols; ++j) crow[j] += acc[r][j];
        }
      }
    }
    for (; i0 < m; ++i0) {
      real acc[kCols] = {};
      for (std::size_t p = 0; p < k; ++p) {
        const real ar = a[i0 * row_stride + p * col_stride];
        const real* brow = b + p * n + j0;
        for (std::size_t j = 0; j < jn; ++j) acc[j] += ar * brow[j];
      }
      real* crow = c + i0 * n + j0;
      for (std::size_t j = 0; j < jn; ++j) crow[j] += acc[j];
    }
  }
}

/// C[m x n] += A[m x k] * B[k x n], all dense row-major.
inline void gemm_nn(const real* a, const real* b, real* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  gemm_blocked(a, k, 1, b, c, m, k, n);
}

/// C[m x n] += A[m x k] * B[n x k]^T. Each entry is a dot product kept in
/// kLanes partial sums that are combined in a fixed order.
inline void gemm_nt(const real* a, const real* b, real* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  constexpr std::size_t kRows = 4, kLanes = 16;
  const std::size_t kv = k - k % kLanes;
  auto finish = [&](const real* lanes, std::size_t i, std::size_t j) {
    real s = 0.0f;
    for (std::size_t l = 0; l < kLanes; ++l) s += lanes[l];
    for (std::size_t p = kv; p < k; ++p) s += a[i * k + p] * b[j * k + p];
    c[i * n + j] += s;
  };
  for (std::size_t i0 = 0; i0 < m; i0 += kRows) {
    const std::size_t im = std::min(kRows, m - i0);
    std::size_t j0 = 0;
    if (im == kRows) {
      for (; j0 + kRows <= n; j0 += kRows) {
        real acc[kRows][kRows][kLanes] = {};
        for (std::size_t p = 0; p < kv; p += kLanes) {
          for (std::size_t r = 0; r < kRows; ++r) {
            const real* ar = a + (i0 + r) * k + p;
            for (std::size_t q = 0; q < kRows; ++q) {
              const real* bq = b + (j0 + q) * k + p;
              for (std::size_t l = 0; l < kLanes; ++l) acc[r][q][l] += ar[l] * bq[l];
            }
          }
        }
        for (std::size_t r = 0; r < kRows; ++r) {
          for (std::size_t q = 0; q < kRows; ++q) finish(acc[r][q], i0 + r, j0 + q);
        }
      }
    }
    for (std::size_t i = i0; i < i0 + im; ++i) {
      for (std::size_t j = j0; j < n; ++j) {
        real acc[kLanes] = {};
        for (std::size_t p = 0; p < kv; p += kLanes) {
          for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[i * k + p + l] * b[j * k + p + l];
        }
        finish(acc, i, j);
      }
    }
  }
}

/// C[m x n] += A[k x m]^T * B[k x n]
inline void gemm_tn(const real* a, const real* b, real* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  gemm_blocked(a, 1, m, b, c, m, k, n);
}

/// Lowers one image (C x H x W) to columns (C*k*k x Ho*Wo) for a stride-1
/// zero-padded k x k window.
inline void im2col(const real* img, std::size_t channels, std::size_t h, std::size_t w,
                   std::size_t k, std::size_t pad, std::size_t ho, std::size_t wo, real* cols) {
  const auto ih_max = static_cast<std::ptrdiff_t>(h);
  const auto iw_max = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        real* row = cols + ((c * k + ki) * k + kj) * ho * wo;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(pad);
          real* dst = row + oh * wo;
          if (ih < 0 || ih >= ih_max) {
            std::fill(dst, dst + wo, 0.0f);
            continue;
          }
          const real* src = img + (c * h + static_cast<std::size_t>(ih)) * w;
          const auto shift = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow) + shift;
            dst[ow] = (iw < 0 || iw >= iw_max) ? 0.0f : src[iw];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters columns back onto the image, accumulating.
inline void col2im(const real* cols, std::size_t channels, std::size_t h, std::size_t w,
                   std::size_t k, std::size_t pad, std::size_t ho, std::size_t wo, real* img) {
  const auto ih_max = static_cast<std::ptrdiff_t>(h);
  const auto iw_max = static_cast<std::ptrdiff_t>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const real* row = cols + ((c * k + ki) * k + kj) * ho * wo;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const auto ih = static_cast<std::ptrdiff_t>(oh + ki) - static_cast<std::ptrdiff_t>(pad);
          if (ih < 0 || ih >= ih_max) continue;
          const real* src = row + oh * wo;
          real* dst = img + (c * h + static_cast<std::size_t>(ih)) * w;
          const auto shift = static_cast<std::ptrdiff_t>(kj) - static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const auto iw = static_cast<std::ptrdiff_t>(ow) + shift;
            if (iw >= 0 && iw < iw_max) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

}  // namespace kernels
}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
