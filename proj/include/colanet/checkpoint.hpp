#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "colanet/config.hpp"
#include "colanet/network.hpp"
#include "colanet/training.hpp"

// Binary checkpoint layout, all integers little-endian:
//   "COLANET1" | u16 version | u32 length + config text | u32 tensor count |
//   per tensor: u16 name length, name, u8 rank, rank x u32 dims, f32 payload |
//   u8 optimizer flag [u64 step, u64 seed, u32 count, count x (f32 m, f32 v)] |
//   u32 CRC-32 of everything before it.
namespace colanet {
inline namespace COLANET_PRECISION_NS {

inline constexpr char kCheckpointMagic[8] = {'C', 'O', 'L', 'A', 'N', 'E', 'T', '1'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct OptimizerState {
  std::uint64_t step = 0;
  std::uint64_t seed = 0;
  std::vector<Tensor> first_moments;   // parameter order
  std::vector<Tensor> second_moments;

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// Everything needed to rebuild a model and resume training. The RNG state is
/// (seed, step): per-step streams are derived from those two numbers.
struct Checkpoint {
  RunConfig config;
  std::vector<NamedTensor> tensors;  // parameters, then buffers
  bool has_optimizer = false;
  OptimizerState optimizer;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void put_f32(float f) { put(std::bit_cast<std::uint32_t>(f)); }
  void put_bytes(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void put_tensor_payload(const Tensor& t) {
    for (real v : t.data()) put_f32(static_cast<float>(v));
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(data_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return v;
  }
  float get_f32() { return std::bit_cast<float>(get<std::uint32_t>()); }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  Tensor get_tensor(const Shape& shape) {
    const std::size_t n = shape_numel(shape);
    need(4 * n);
    Tensor t(shape);
    for (auto& v : t.data()) v = static_cast<real>(get_f32());
    return t;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw CorruptionError("checkpoint: truncated data");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.put_bytes(std::string(kCheckpointMagic, 8));
  w.put(kCheckpointVersion);
  const std::string text = serialize(ck.config);
  w.put(static_cast<std::uint32_t>(text.size()));
  w.put_bytes(text);
  w.put(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    if (t.name.size() > 0xFFFF) throw FormatError("checkpoint: tensor name too long");
    w.put(static_cast<std::uint16_t>(t.name.size()));
    w.put_bytes(t.name);
    w.put(static_cast<std::uint8_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) w.put(static_cast<std::uint32_t>(d));
    w.put_tensor_payload(t.value);
  }
  w.put(static_cast<std::uint8_t>(ck.has_optimizer ? 1 : 0));
  if (ck.has_optimizer) {
    w.put(ck.optimizer.step);
    w.put(ck.optimizer.seed);
    if (ck.optimizer.first_moments.size() != ck.optimizer.second_moments.size() ||
        ck.optimizer.first_moments.size() > ck.tensors.size()) {
      throw FormatError("checkpoint: optimizer moments do not match the tensors");
    }
    w.put(static_cast<std::uint32_t>(ck.optimizer.first_moments.size()));
    for (std::size_t i = 0; i < ck.optimizer.first_moments.size(); ++i) {
      w.put_tensor_payload(ck.optimizer.first_moments[i]);
      w.put_tensor_payload(ck.optimizer.second_moments[i]);
    }
  }
  auto& bytes = w.bytes();
  w.put(detail::crc32_of(bytes.data(), bytes.size()));
  return std::move(bytes);
}

/// Parses a checkpoint image. Bad magic is a FormatError, another version an
/// UnsupportedError, and truncation or a CRC mismatch a CorruptionError.
inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw FormatError("checkpoint: bad magic, not a COLANET1 file");
  }
  if (bytes.size() < 10) throw CorruptionError("checkpoint: truncated header");
  const std::uint16_t version = static_cast<std::uint16_t>(bytes[8] | (bytes[9] << 8));
  if (version != kCheckpointVersion) {
    throw UnsupportedError("checkpoint: format version " + std::to_string(version) + " is not supported");
  }
  if (bytes.size() < 14) throw CorruptionError("checkpoint: truncated data");
  const std::size_t body = bytes.size() - 4;
  detail::ByteReader tail(bytes.data() + body, 4);
  if (tail.get<std::uint32_t>() != detail::crc32_of(bytes.data(), body)) {
    throw CorruptionError("checkpoint: CRC mismatch");
  }

  detail::ByteReader r(bytes.data() + 10, body - 10);
  Checkpoint ck;
  const auto text_len = r.get<std::uint32_t>();
  try {
    ck.config = parse_run_config(r.get_bytes(text_len));
  } catch (const ConfigError& e) {
    throw CorruptionError(std::string("checkpoint: embedded config invalid: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.get_bytes(r.get<std::uint16_t>());
    const auto rank = r.get<std::uint8_t>();
    if (rank > 4) throw CorruptionError("checkpoint: tensor '" + t.name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      d = r.get<std::uint32_t>();
      if (d == 0) throw CorruptionError("checkpoint: tensor '" + t.name + "' has a zero dimension");
      if (d > r.remaining() / 4 / numel) throw CorruptionError("checkpoint: tensor '" + t.name + "' overruns the file");
      numel *= d;
    }
    t.value = r.get_tensor(shape);
    ck.tensors.push_back(std::move(t));
  }
  const auto flag = r.get<std::uint8_t>();
  if (flag > 1) throw CorruptionError("checkpoint: bad optimizer flag");
  ck.has_optimizer = flag == 1;
  if (ck.has_optimizer) {
    ck.optimizer.step = r.get<std::uint64_t>();
    ck.optimizer.seed = r.get<std::uint64_t>();
    // Moments belong to the parameters, which come first among the tensors.
    const auto moments = r.get<std::uint32_t>();
    if (moments > ck.tensors.size()) throw CorruptionError("checkpoint: more moment pairs than tensors");
    for (std::uint32_t i = 0; i < moments; ++i) {
      ck.optimizer.first_moments.push_back(r.get_tensor(ck.tensors[i].value.shape()));
      ck.optimizer.second_moments.push_back(r.get_tensor(ck.tensors[i].value.shape()));
    }
  }
  if (r.remaining() != 0) throw CorruptionError("checkpoint: trailing bytes before CRC");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint '" + path + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

/// Snapshot of a model (and optionally its optimizer progress).
inline Checkpoint make_checkpoint(const ColaNet& model, const RunConfig& config, const TrainState* state = nullptr) {
  Checkpoint ck;
  ck.config = config;
  ck.config.model = model.config();
  const auto& params = model.weights().params();
  for (const auto& p : params) ck.tensors.push_back({p.name, p.value.value()});
  for (const auto& b : model.weights().buffers()) ck.tensors.push_back({b.name, b.value.value()});
  if (state) {
    ck.has_optimizer = true;
    ck.optimizer.step = state->step;
    ck.optimizer.seed = config.train.seed;
    for (const auto& p : params) {
      ck.optimizer.first_moments.push_back(p.has_moments() ? p.first_moment : Tensor(p.value.shape()));
      ck.optimizer.second_moments.push_back(p.has_moments() ? p.second_moment : Tensor(p.value.shape()));
    }
  }
  return ck;
}

/// Builds the model a checkpoint describes and loads every tensor into it.
/// Optimizer moments are restored when present; `state` receives the step.
inline ColaNet restore_model(const Checkpoint& ck, TrainState* state = nullptr) {
  ColaNet model(ck.config.model);
  auto& w = model.weights();
  const std::size_t expected = w.params().size() + w.buffers().size();
  if (ck.tensors.size() != expected) {
    throw FormatError("checkpoint: " + std::to_string(ck.tensors.size()) + " tensors, model needs " +
                      std::to_string(expected));
  }
  for (const auto& t : ck.tensors) w.assign(t.name, t.value);
  if (ck.has_optimizer) {
    auto& params = w.params();
    if (ck.optimizer.first_moments.size() != params.size()) {
      throw FormatError("checkpoint: optimizer section does not match the parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      params[i].first_moment = ck.optimizer.first_moments[i];
      params[i].second_moment = ck.optimizer.second_moments[i];
    }
    if (state) state->step = ck.optimizer.step;
  }
  return model;
}

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
