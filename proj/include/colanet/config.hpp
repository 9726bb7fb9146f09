#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "colanet/degradation.hpp"
#include "colanet/network.hpp"
#include "colanet/training.hpp"

// Plain-text run configuration: one "key = value" per line, '#' starts a
// comment. Missing keys keep their defaults; unknown keys are rejected.
namespace colanet {
inline namespace COLANET_PRECISION_NS {

struct InferenceConfig {
  // Tile edge for large images; 0 runs the whole image at once.
  std::size_t tile = 64;
  std::size_t overlap = 16;

  friend bool operator==(const InferenceConfig&, const InferenceConfig&) = default;
};

struct PathConfig {
  std::string train_dir;
  std::string test_dir;
  std::string checkpoint = "colanet.ckpt";
  std::string loss_csv = "loss.csv";

  friend bool operator==(const PathConfig&, const PathConfig&) = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DegradationSpec degradation;
  InferenceConfig inference;
  PathConfig paths;

  void validate() const {
    model.validate();
    train.validate();
    degradation.validate();
    if (inference.tile != 0 && inference.overlap >= inference.tile) {
      throw ConfigError("inference: overlap must be smaller than tile");
    }
  }

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

namespace detail {

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError("config: bad value '" + text + "' for " + key);
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: bad boolean '" + text + "' for " + key);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

// One entry per key: how to print it and how to read it back.
struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define COLANET_NUM(section, name)                                                                     \
  Field {                                                                                              \
    #section "." #name, [](const RunConfig& c) { return format_number(c.section.name); },              \
        [](RunConfig& c, const std::string& v) {                                                       \
          c.section.name = parse_number<decltype(c.section.name)>(#section "." #name, v);              \
        }                                                                                              \
  }
#define COLANET_BOOL(section, name)                                                                    \
  Field {                                                                                              \
    #section "." #name, [](const RunConfig& c) { return std::string(c.section.name ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.section.name = parse_bool(#section "." #name, v); }  \
  }
#define COLANET_STR(section, name)                                                                     \
  Field {                                                                                              \
    #section "." #name, [](const RunConfig& c) { return c.section.name; },                             \
        [](RunConfig& c, const std::string& v) { c.section.name = v; }                                 \
  }

inline const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      Field{"model.variant", [](const RunConfig& c) { return std::string(to_string(c.model.variant)); },
            [](RunConfig& c, const std::string& v) {
              if (v == "basic") {
                c.model.variant = FemVariant::basic;
              } else if (v == "enhanced") {
                c.model.variant = FemVariant::enhanced;
              } else {
                throw ConfigError("config: model.variant must be basic or enhanced, got '" + v + "'");
              }
            }},
      COLANET_NUM(model, num_cab),
      COLANET_NUM(model, channels),
      COLANET_NUM(model, in_channels),
      COLANET_NUM(model, fem_depth),
      COLANET_NUM(model, patch_size),
      COLANET_NUM(model, patch_stride),
      COLANET_NUM(model, ca_reduction),
      COLANET_NUM(model, local_groups),
      COLANET_BOOL(model, shared_local_gate),
      COLANET_BOOL(model, scaled_similarity),
      COLANET_NUM(model, bn_eps),
      COLANET_NUM(model, bn_momentum),

      COLANET_NUM(train, base_lr),
      COLANET_NUM(train, halving_period_epochs),
      COLANET_NUM(train, steps_per_epoch),
      COLANET_NUM(train, total_epochs),
      COLANET_NUM(train, max_steps),
      COLANET_NUM(train, batch_size),
      COLANET_NUM(train, crop),
      COLANET_NUM(train, beta1),
      COLANET_NUM(train, beta2),
      COLANET_NUM(train, adam_eps),
      COLANET_NUM(train, seed),
      COLANET_BOOL(train, augment),
      COLANET_NUM(train, grad_clip),
      COLANET_NUM(train, checkpoint_every),
      COLANET_BOOL(train, blind),
      COLANET_NUM(train, sigma_min),
      COLANET_NUM(train, sigma_max),

      Field{"degradation.kind", [](const RunConfig& c) { return std::string(to_string(c.degradation.kind)); },
            [](RunConfig& c, const std::string& v) { c.degradation.kind = parse_degradation_kind(v); }},
      COLANET_NUM(degradation, sigma),
      COLANET_NUM(degradation, sigma_s),
      COLANET_NUM(degradation, sigma_c),
      COLANET_BOOL(degradation, hetero_random),
      COLANET_NUM(degradation, sigma_s_max),
      COLANET_NUM(degradation, sigma_c_max),
      COLANET_NUM(degradation, quality),
      COLANET_NUM(degradation, seed),
      COLANET_BOOL(degradation, clip),

      COLANET_NUM(inference, tile),
      COLANET_NUM(inference, overlap),

      COLANET_STR(paths, train_dir),
      COLANET_STR(paths, test_dir),
      COLANET_STR(paths, checkpoint),
      COLANET_STR(paths, loss_csv),
  };
  return all;
}

#undef COLANET_NUM
#undef COLANET_BOOL
#undef COLANET_STR

}  // namespace detail

/// Every key with its current value, in a fixed order.
inline std::string serialize(const RunConfig& c) {
  std::string out;
  for (const auto& f : detail::fields()) out += f.key + " = " + f.get(c) + "\n";
  return out;
}

inline RunConfig parse_run_config(const std::string& text) {
  std::map<std::string, const detail::Field*> by_key;
  for (const auto& f : detail::fields()) by_key[f.key] = &f;

  std::vector<std::pair<std::string, std::string>> entries;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (!by_key.count(key)) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("config: duplicate key '" + key + "'");
    entries.emplace_back(std::move(key), std::move(value));
  }

  RunConfig c;
  // The variant picks the FEM depth default, so it is applied first.
  if (seen.count("model.variant")) {
    for (const auto& [k, v] : entries) {
      if (k == "model.variant") by_key[k]->set(c, v);
    }
    if (c.model.variant == FemVariant::enhanced) c.model.fem_depth = ModelConfig::enhanced().fem_depth;
  }
  for (const auto& [k, v] : entries) {
    if (k != "model.variant") by_key[k]->set(c, v);
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace COLANET_PRECISION_NS
}  // namespace colanet
