#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "colanet/precision.hpp"

namespace colanet {
inline namespace COLANET_PRECISION_NS {

// ---------------------------------------------------------------------------
// Error hierarchy. Every failure the library reports derives from Error so the
// CLI can map categories onto exit codes.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedError : public FormatError {
 public:
  using FormatError::FormatError;
};

class CorruptionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major float array of rank 0..4. Feature maps are N x C x H x W
/// with W varying fastest.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, real fill = 0.0f) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_numel(shape_), fill);
  }

  Tensor(Shape shape, std::vector<real> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(real v) { return Tensor(Shape{}, std::vector<real>{v}); }

  static Tensor from(Shape shape, std::initializer_list<real> values) {
    return Tensor(std::move(shape), std::vector<real>(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const {
    if (i >= shape_.size()) throw ShapeError("dimension index out of range for " + shape_str(shape_));
    return shape_[i];
  }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty() && shape_.empty(); }

  std::span<real> data() noexcept { return data_; }
  std::span<const real> data() const noexcept { return data_; }
  real* ptr() noexcept { return data_.data(); }
  const real* ptr() const noexcept { return data_.data(); }

  real& operator[](std::size_t i) { return data_[i]; }
  real operator[](std::size_t i) const { return data_[i]; }

  real& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  real at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  real item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  void fill(real v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor reshaped(Shape s) const {
    if (shape_numel(s) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    }
    return Tensor(std::move(s), data_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](real v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    if (shape_.size() > 4) throw ShapeError("tensor rank above 4: " + shape_str(shape_));
    for (auto d : shape_) {
      if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<real> data_;
};

inline void require_shape(const Tensor& t, const Shape& s, const char* what) {
  if (t.shape() != s) {
    throw ShapeError(std::string(what) + ": expected " + shape_str(s) + ", got " + shape_str(t.shape()));
  }
}

inline void require_rank(const Tensor& t, std::size_t r, const char* what) {
  if (t.rank() != r) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_str(t.shape()));
  }
}

inline real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("max_abs_diff shape mismatch");
  real m = 0.0f;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
