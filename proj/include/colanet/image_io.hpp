#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "colanet/tensor.hpp"

// Binary netpbm images: P5 (grayscale) and P6 (RGB), maxval 255. Tensors are
// 1 x C x H x W on the 0-255 scale.
namespace colanet {
inline namespace COLANET_PRECISION_NS {

inline std::vector<std::uint8_t> encode_netpbm(const Tensor& image) {
  require_rank(image, 4, "save_image input");
  const std::size_t c = image.dim(1), h = image.dim(2), w = image.dim(3);
  if (image.dim(0) != 1 || (c != 1 && c != 3)) {
    throw ShapeError("save_image: expected 1 x 1 or 1 x 3 channels, got " + shape_str(image.shape()));
  }
  const std::string header = std::string(c == 1 ? "P5" : "P6") + "\n" + std::to_string(w) + " " +
                             std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + c * h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double v = std::round(std::clamp(static_cast<double>(image[ch * h * w + i]), 0.0, 255.0));
      out.push_back(static_cast<std::uint8_t>(v));
    }
  }
  return out;
}

inline Tensor decode_netpbm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* what) {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError(std::string("netpbm: missing ") + what);
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
      if (v > 1u << 20) throw FormatError(std::string("netpbm: ") + what + " too large");
    }
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("netpbm: expected a binary P5 or P6 header");
  }
  const std::size_t c = bytes[1] == '5' ? 1 : 3;
  pos = 2;
  const std::size_t w = read_uint("width");
  const std::size_t h = read_uint("height");
  const std::size_t maxval = read_uint("maxval");
  if (w == 0 || h == 0) throw FormatError("netpbm: zero image dimension");
  if (maxval != 255) throw UnsupportedError("netpbm: maxval " + std::to_string(maxval) + " is not supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("netpbm: malformed header");
  ++pos;
  if (bytes.size() - pos < c * h * w) throw FormatError("netpbm: payload shorter than the header promises");

  Tensor image(Shape{1, c, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) image[ch * h * w + i] = static_cast<real>(bytes[pos++]);
  }
  return image;
}

inline void save_image(const Tensor& image, const std::string& path) {
  const auto bytes = encode_netpbm(image);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write image '" + path + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for image '" + path + "'");
}

inline Tensor load_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image '" + path + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_netpbm(bytes);
}

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
