#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "colanet/attention.hpp"
#include "colanet/network.hpp"

// Tiled restoration of full images. Overlapping tiles bound the quadratic
// attention cost; predicted residuals are averaged where tiles overlap.
namespace colanet {
inline namespace COLANET_PRECISION_NS {

struct Tile {
  std::size_t y = 0;
  std::size_t x = 0;
  std::size_t h = 0;
  std::size_t w = 0;
};

struct RestoreResult {
  Tensor image;                         // 1 x C x H x W, 0-255 scale
  std::vector<Tile> tiles;
  std::vector<std::vector<double>> heat;  // [cab][tile]
  std::vector<Tensor> first_tile_distance;  // per CAB, from the first tile
};

/// Tile origins along one axis: evenly stepped by (tile - overlap), with the
/// last tile flush against the far edge.
inline std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t tile, std::size_t overlap) {
  if (tile == 0 || extent <= tile) return {0};
  if (overlap >= tile) throw ConfigError("tiling: overlap must be smaller than tile");
  const std::size_t step = tile - overlap;
  std::vector<std::size_t> o;
  for (std::size_t p = 0; p + tile < extent; p += step) o.push_back(p);
  o.push_back(extent - tile);
  return o;
}

inline std::vector<Tile> plan_tiles(std::size_t h, std::size_t w, std::size_t tile, std::size_t overlap) {
  std::vector<Tile> tiles;
  for (std::size_t y : tile_origins(h, tile, overlap)) {
    for (std::size_t x : tile_origins(w, tile, overlap)) {
      tiles.push_back(Tile{y, x, tile == 0 ? h : std::min(tile, h), tile == 0 ? w : std::min(tile, w)});
    }
  }
  return tiles;
}

/// Runs the network over `image` (1 x C x H x W on 0-255) tile by tile and
/// returns input + averaged residual. A model whose tail is zero therefore
/// returns the input bit for bit.
inline RestoreResult restore(ColaNet& model, const Tensor& image, std::size_t tile, std::size_t overlap) {
  require_rank(image, 4, "restore input");
  if (image.dim(0) != 1) throw ShapeError("restore: expected a single image, got " + shape_str(image.shape()));
  const std::size_t c = image.dim(1), h = image.dim(2), w = image.dim(3);
  NoGradGuard no_grad;
  RestoreResult r;
  r.tiles = plan_tiles(h, w, tile, overlap);
  r.heat.assign(model.config().num_cab, {});
  std::vector<double> residual(c * h * w, 0.0);
  std::vector<std::size_t> count(h * w, 0);

  for (std::size_t ti = 0; ti < r.tiles.size(); ++ti) {
    const Tile& t = r.tiles[ti];
    Tensor in(Shape{1, c, t.h, t.w});
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < t.h; ++i) {
        for (std::size_t j = 0; j < t.w; ++j) {
          in[(ch * t.h + i) * t.w + j] = image[(ch * h + t.y + i) * w + t.x + j] / 255.0f;
        }
      }
    }
    const ForwardResult fr = model.forward(Var(in), NormMode::infer);
    const Tensor& out = fr.output.value();
    if (!out.all_finite()) throw NumericError("restore: non-finite network output");
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t i = 0; i < t.h; ++i) {
        for (std::size_t j = 0; j < t.w; ++j) {
          const std::size_t k = (ch * t.h + i) * t.w + j;
          residual[(ch * h + t.y + i) * w + t.x + j] += static_cast<double>(out[k]) - in[k];
        }
      }
    }
    for (std::size_t i = 0; i < t.h; ++i) {
      for (std::size_t j = 0; j < t.w; ++j) ++count[(t.y + i) * w + t.x + j];
    }
    for (const auto& trace : fr.traces) {
      r.heat[trace.cab_index].push_back(heat_map(trace.fusion_w_nl, trace.fusion_w_l));
      if (ti == 0) r.first_tile_distance.push_back(trace.distance.front());
    }
  }

  r.image = image;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < h * w; ++p) {
      const double d = residual[ch * h * w + p];
      if (d != 0.0) r.image[ch * h * w + p] += static_cast<real>(255.0 * d / static_cast<double>(count[p]));
    }
  }
  return r;
}

/// Grayscale rendering of per-tile heat values: each pixel averages the
/// values of the tiles covering it, and [0, 1] maps linearly onto [0, 255].
inline Tensor render_heat(const std::vector<Tile>& tiles, const std::vector<double>& heat, std::size_t h,
                          std::size_t w) {
  if (tiles.size() != heat.size()) throw ShapeError("render_heat: one heat value per tile expected");
  std::vector<double> acc(h * w, 0.0);
  std::vector<std::size_t> count(h * w, 0);
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    const Tile& t = tiles[k];
    for (std::size_t i = 0; i < t.h; ++i) {
      for (std::size_t j = 0; j < t.w; ++j) {
        acc[(t.y + i) * w + t.x + j] += heat[k];
        ++count[(t.y + i) * w + t.x + j];
      }
    }
  }
  Tensor out(Shape{1, 1, h, w});
  for (std::size_t p = 0; p < h * w; ++p) {
    out[p] = count[p] == 0 ? 0.0f : static_cast<real>(255.0 * acc[p] / static_cast<double>(count[p]));
  }
  return out;
}

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
