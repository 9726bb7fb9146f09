#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "colanet/autograd.hpp"
#include "colanet/tensor.hpp"

namespace colanet {
inline namespace COLANET_PRECISION_NS {

/// Sliding-window layout over a C x H x W map. Patch index p = row * grid_w +
/// col has its top-left corner at (row * stride, col * stride).
struct PatchGeometry {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t patch_h = 1;
  std::size_t patch_w = 1;
  std::size_t stride = 1;

  void validate() const {
    if (channels == 0 || height == 0 || width == 0 || patch_h == 0 || patch_w == 0 || stride == 0) {
      throw ConfigError("patch geometry: all extents must be positive");
    }
    if (patch_h > height || patch_w > width) {
      throw ShapeError("patch geometry: patch " + std::to_string(patch_h) + "x" + std::to_string(patch_w) +
                       " larger than map " + std::to_string(height) + "x" + std::to_string(width));
    }
  }

  std::size_t grid_h() const { return (height - patch_h) / stride + 1; }
  std::size_t grid_w() const { return (width - patch_w) / stride + 1; }
  std::size_t num_patches() const { return grid_h() * grid_w(); }
  std::size_t patch_len() const { return channels * patch_h * patch_w; }

  /// True when the grid reaches the bottom and right edges exactly.
  bool covers_fully() const {
    return (height - patch_h) % stride == 0 && (width - patch_w) % stride == 0;
  }

  friend bool operator==(const PatchGeometry&, const PatchGeometry&) = default;
};

inline PatchGeometry geometry_for(const Shape& map, std::size_t patch, std::size_t stride) {
  if (map.size() != 4) throw ShapeError("geometry_for: expected N x C x H x W, got " + shape_str(map));
  PatchGeometry g{map[1], map[2], map[3], patch, patch, stride};
  g.validate();
  return g;
}

/// Smallest size >= n on which a (patch, stride) grid ends exactly at the edge.
inline std::size_t aligned_extent(std::size_t n, std::size_t patch, std::size_t stride) {
  if (n <= patch) return patch;
  const std::size_t over = (n - patch) % stride;
  return over == 0 ? n : n + (stride - over);
}

struct PatchSet {
  PatchGeometry geometry;
  Tensor patches;  // num_patches x patch_len
};

namespace detail {

/// Offset of every patch entry within the C x H x W map, in unfold order
/// (patch-major; inside a patch channel, then row, then column).
inline std::vector<std::size_t> patch_offsets(const PatchGeometry& g) {
  const std::size_t gh = g.grid_h(), gw = g.grid_w(), len = g.patch_len();
  std::vector<std::size_t> idx(gh * gw * len);
  std::size_t k = 0;
  for (std::size_t r = 0; r < gh; ++r) {
    for (std::size_t q = 0; q < gw; ++q) {
      for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t i = 0; i < g.patch_h; ++i) {
          const std::size_t row = (c * g.height + r * g.stride + i) * g.width + q * g.stride;
          for (std::size_t j = 0; j < g.patch_w; ++j) idx[k++] = row + j;
        }
      }
    }
  }
  return idx;
}

inline void check_map(const Tensor& t, const PatchGeometry& g, const char* what) {
  g.validate();
  if (t.shape() != Shape{1, g.channels, g.height, g.width}) {
    throw ShapeError(std::string(what) + ": map " + shape_str(t.shape()) + " does not match geometry " +
                     shape_str(Shape{1, g.channels, g.height, g.width}));
  }
}

inline void check_patches(const Tensor& t, const PatchGeometry& g, const char* what) {
  g.validate();
  if (t.shape() != Shape{g.num_patches(), g.patch_len()}) {
    throw ShapeError(std::string(what) + ": patches " + shape_str(t.shape()) + " do not match geometry " +
                     shape_str(Shape{g.num_patches(), g.patch_len()}));
  }
}

}  // namespace detail

/// Number of patch entries landing on each pixel of the C x H x W map.
inline std::vector<std::size_t> coverage_counts(const PatchGeometry& g) {
  g.validate();
  std::vector<std::size_t> counts(g.channels * g.height * g.width, 0);
  for (auto off : detail::patch_offsets(g)) ++counts[off];
  return counts;
}

inline PatchSet unfold(const Tensor& map, const PatchGeometry& g) {
  detail::check_map(map, g, "unfold");
  const auto idx = detail::patch_offsets(g);
  Tensor patches(Shape{g.num_patches(), g.patch_len()});
  for (std::size_t k = 0; k < idx.size(); ++k) patches[k] = map[idx[k]];
  return PatchSet{g, std::move(patches)};
}

struct FoldResult {
  Tensor map;                  // 1 x C x H x W
  std::vector<bool> covered;   // per map element; false where no patch lands
};

/// Averaging inverse of unfold. Uncovered pixels are 0 and flagged.
inline FoldResult fold(const PatchSet& set) {
  const PatchGeometry& g = set.geometry;
  detail::check_patches(set.patches, g, "fold");
  const auto idx = detail::patch_offsets(g);
  Tensor map(Shape{1, g.channels, g.height, g.width});
  std::vector<std::size_t> counts(map.numel(), 0);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    map[idx[k]] += set.patches[k];
    ++counts[idx[k]];
  }
  std::vector<bool> covered(map.numel());
  for (std::size_t i = 0; i < map.numel(); ++i) {
    covered[i] = counts[i] != 0;
    if (counts[i] > 1) map[i] /= static_cast<real>(counts[i]);
  }
  return FoldResult{std::move(map), std::move(covered)};
}

// Tape-recording variants used inside the attention graph.

inline Var unfold(const Var& map, const PatchGeometry& g) {
  detail::check_map(map.value(), g, "unfold");
  auto idx = detail::patch_offsets(g);
  Tensor patches(Shape{g.num_patches(), g.patch_len()});
  for (std::size_t k = 0; k < idx.size(); ++k) patches[k] = map.value()[idx[k]];
  const std::size_t total = map.value().numel();
  return detail::record(std::move(patches), {map}, [idx = std::move(idx), total](detail::Node& self) {
    std::vector<real> g(total, 0.0f);
    for (std::size_t k = 0; k < idx.size(); ++k) g[idx[k]] += self.grad[k];
    detail::accumulate(*self.inputs[0], g);
  });
}

inline Var fold(const Var& patches, const PatchGeometry& g) {
  detail::check_patches(patches.value(), g, "fold");
  auto idx = detail::patch_offsets(g);
  const std::size_t total = g.channels * g.height * g.width;
  std::vector<real> count(total, 0.0f);
  for (auto off : idx) count[off] += 1.0f;
  Tensor map(Shape{1, g.channels, g.height, g.width});
  for (std::size_t k = 0; k < idx.size(); ++k) map[idx[k]] += patches.value()[k];
  for (std::size_t i = 0; i < total; ++i) {
    if (count[i] > 1.0f) map[i] /= count[i];
  }
  return detail::record(std::move(map), {patches},
                        [idx = std::move(idx), count = std::move(count)](detail::Node& self) {
                          std::vector<real> g(idx.size());
                          for (std::size_t k = 0; k < idx.size(); ++k) g[k] = self.grad[idx[k]] / count[idx[k]];
                          detail::accumulate(*self.inputs[0], g);
                        });
}

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
