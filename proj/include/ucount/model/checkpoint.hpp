#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ucount/data/io.hpp"
#include "ucount/error.hpp"
#include "ucount/key_value.hpp"
#include "ucount/numerics/tensor.hpp"

namespace ucount {

/// Network topology and head settings.
struct ArchConfig {
  std::size_t in_channels = 1;
  std::array<std::size_t, 5> trunk_widths{8, 8, 16, 16, 32};  ///< pools after the 2nd and 4th layer
  std::vector<std::size_t> nonlocal_widths{32};               ///< 3×3 convs before the third pool
  std::size_t embed_dim = 24;
  std::size_t attention_layers = 2;
  std::array<std::size_t, 4> branch_widths{16, 12, 8, 1};  ///< upsample after the 2nd and 3rd layer
  double softplus_beta = 1.0;
  double dropout = 0.0;          ///< MC-dropout rate before trunk, non-local and variance-branch convs
  double variance_floor = 1e-3;  ///< added after softplus, in network units
  bool scale_attention = false;  ///< divide attention logits by sqrt(embed_dim)
  bool positional_encoding = false;
  bool variance_head = true;     ///< false gives the MC-dropout variant without a predictive-variance branch
  double density_scale = 100.0;  ///< network units per unit of physical density

  /// Smallest variance a forward pass can report, in physical units.
  double min_variance() const { return variance_floor / (density_scale * density_scale); }

  void validate() const {
    auto fail = [](const std::string& what) { throw ArgumentError("arch: " + what); };
    if (in_channels == 0) fail("in_channels must be positive");
    for (std::size_t w : trunk_widths) if (w == 0) fail("trunk widths must be positive");
    for (std::size_t w : nonlocal_widths) if (w == 0) fail("non-local widths must be positive");
    for (std::size_t w : branch_widths) if (w == 0) fail("branch widths must be positive");
    if (branch_widths[3] != 1) fail("the last branch layer must have exactly one filter");
    if (embed_dim == 0) fail("embed_dim must be positive");
    if (attention_layers == 0) fail("at least one attention layer is required");
    if (!(softplus_beta > 0.0)) fail("softplus beta must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (!(variance_floor > 0.0)) fail("variance floor must be positive");
    if (!(density_scale > 0.0)) fail("density scale must be positive");
  }

  std::string to_text() const {
    std::ostringstream os;
    auto list = [&](const auto& xs) {
      std::string s;
      for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + std::to_string(xs[i]);
      return s;
    };
    os << "arch.in_channels=" << in_channels << "\n"
       << "arch.trunk_widths=" << list(trunk_widths) << "\n"
       << "arch.nonlocal_widths=" << list(nonlocal_widths) << "\n"
       << "arch.embed_dim=" << embed_dim << "\n"
       << "arch.attention_layers=" << attention_layers << "\n"
       << "arch.branch_widths=" << list(branch_widths) << "\n"
       << "arch.softplus_beta=" << format_double(softplus_beta) << "\n"
       << "arch.dropout=" << format_double(dropout) << "\n"
       << "arch.variance_floor=" << format_double(variance_floor) << "\n"
       << "arch.scale_attention=" << (scale_attention ? "true" : "false") << "\n"
       << "arch.positional_encoding=" << (positional_encoding ? "true" : "false") << "\n"
       << "arch.variance_head=" << (variance_head ? "true" : "false") << "\n"
       << "arch.density_scale=" << format_double(density_scale) << "\n";
    return os.str();
  }

  /// Reads "arch.*" keys, keeping defaults for absent ones.
  static ArchConfig from_keys(const KeyValues& kv, const std::string& prefix = "arch.") {
    ArchConfig a;
    a.in_channels = kv.get_uint(prefix + "in_channels", a.in_channels);
    auto fixed = [&](const std::string& key, auto& arr) {
      if (!kv.has(prefix + key)) return;
      auto xs = kv.get_uint_list(prefix + key, {});
      if (xs.size() != arr.size()) {
        throw ConfigError(kv.source() + ":" + std::to_string(kv.entries().at(prefix + key).line) + ": " + prefix + key +
                          ": expected " + std::to_string(arr.size()) + " values");
      }
      for (std::size_t i = 0; i < arr.size(); ++i) arr[i] = xs[i];
    };
    fixed("trunk_widths", a.trunk_widths);
    fixed("branch_widths", a.branch_widths);
    if (kv.has(prefix + "nonlocal_widths")) {
      a.nonlocal_widths.clear();
      for (auto w : kv.get_uint_list(prefix + "nonlocal_widths", {})) a.nonlocal_widths.push_back(w);
    }
    a.embed_dim = kv.get_uint(prefix + "embed_dim", a.embed_dim);
    a.attention_layers = kv.get_uint(prefix + "attention_layers", a.attention_layers);
    a.softplus_beta = kv.get_double(prefix + "softplus_beta", a.softplus_beta);
    a.dropout = kv.get_double(prefix + "dropout", a.dropout);
    a.variance_floor = kv.get_double(prefix + "variance_floor", a.variance_floor);
    a.scale_attention = kv.get_bool(prefix + "scale_attention", a.scale_attention);
    a.positional_encoding = kv.get_bool(prefix + "positional_encoding", a.positional_encoding);
    a.variance_head = kv.get_bool(prefix + "variance_head", a.variance_head);
    a.density_scale = kv.get_double(prefix + "density_scale", a.density_scale);
    return a;
  }

  static std::vector<std::string> keys(const std::string& prefix = "arch.") {
    std::vector<std::string> out;
    for (const char* k : {"in_channels", "trunk_widths", "nonlocal_widths", "embed_dim", "attention_layers",
                          "branch_widths", "softplus_beta", "dropout", "variance_floor", "scale_attention",
                          "positional_encoding", "variance_head", "density_scale"}) {
      out.push_back(prefix + k);
    }
    return out;
  }

  /// The MC-dropout counterpart: no variance branch, dropout active.
  ArchConfig mc_dropout_variant(double rate) const {
    ArchConfig a = *this;
    a.variance_head = false;
    a.dropout = rate;
    return a;
  }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Parameter groups that can be frozen independently.
enum class ParamGroup { kTrunk, kNonLocal, kDensity, kVariance };

inline ParamGroup parameter_group(const std::string& name) {
  const std::string head = name.substr(0, name.find('.'));
  if (head == "trunk") return ParamGroup::kTrunk;
  if (head == "nonlocal") return ParamGroup::kNonLocal;
  if (head == "density") return ParamGroup::kDensity;
  if (head == "variance") return ParamGroup::kVariance;
  throw ArgumentError("parameter '" + name + "' has no known group");
}

/// Name → shape of every parameter the architecture defines.
inline std::map<std::string, Shape> parameter_shapes(const ArchConfig& a) {
  a.validate();
  std::map<std::string, Shape> out;
  auto conv = [&](const std::string& name, std::size_t in, std::size_t outc, std::size_t k) {
    out[name + ".weight"] = Shape{outc, in, k, k};
    out[name + ".bias"] = Shape{outc};
  };
  std::size_t c = a.in_channels;
  for (std::size_t i = 0; i < 5; ++i) {
    conv("trunk.conv" + std::to_string(i), c, a.trunk_widths[i], 3);
    c = a.trunk_widths[i];
  }
  const std::size_t local = c;
  for (std::size_t i = 0; i < a.nonlocal_widths.size(); ++i) {
    conv("nonlocal.conv" + std::to_string(i), c, a.nonlocal_widths[i], 3);
    c = a.nonlocal_widths[i];
  }
  conv("nonlocal.embed", c, a.embed_dim, 1);
  for (std::size_t l = 0; l < a.attention_layers; ++l) {
    for (const char* p : {"query", "key", "value"}) {
      out["nonlocal.attn" + std::to_string(l) + "." + p] = Shape{a.embed_dim, a.embed_dim};
    }
  }
  for (const std::string branch : {"density", "variance"}) {
    if (branch == "variance" && !a.variance_head) continue;
    std::size_t bc = local + a.embed_dim;
    for (std::size_t i = 0; i < 4; ++i) {
      conv(branch + ".conv" + std::to_string(i), bc, a.branch_widths[i], i == 3 ? 1 : 3);
      bc = a.branch_widths[i];
    }
  }
  return out;
}

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::string stage = "init";
  std::uint64_t epoch = 0;
  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

/// Full parameter set of one network plus its architecture.
struct ModelCheckpoint {
  ArchConfig arch;
  std::map<std::string, Tensor> params;
  TrainingMetadata meta;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params) n += t.size();
    return n;
  }

  /// Every parameter present with the shape the architecture dictates.
  void validate() const {
    const auto shapes = parameter_shapes(arch);
    if (shapes.size() != params.size()) {
      throw ShapeError("checkpoint has " + std::to_string(params.size()) + " tensors, architecture defines " +
                       std::to_string(shapes.size()));
    }
    for (const auto& [name, shape] : shapes) {
      auto it = params.find(name);
      if (it == params.end()) throw ShapeError("checkpoint is missing parameter " + name);
      if (it->second.shape() != shape) {
        throw ShapeError("parameter " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                         shape_str(shape));
      }
    }
  }

  friend bool operator==(const ModelCheckpoint&, const ModelCheckpoint&) = default;
};

inline TensorContainer to_container(const ModelCheckpoint& m) {
  TensorContainer c;
  c.metadata = m.arch.to_text() + "meta.seed=" + std::to_string(m.meta.seed) + "\nmeta.stage=" + m.meta.stage +
               "\nmeta.epoch=" + std::to_string(m.meta.epoch) + "\n";
  c.tensors = m.params;
  return c;
}

inline ModelCheckpoint from_container(const TensorContainer& c, const std::string& source = "<checkpoint>") {
  KeyValues kv;
  try {
    kv = KeyValues::parse(c.metadata, source + " metadata");
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::kMalformedHeader, e.what());
  }
  ModelCheckpoint m;
  try {
    m.arch = ArchConfig::from_keys(kv);
    m.meta.seed = kv.get_uint("meta.seed", 0);
    m.meta.stage = kv.get_string("meta.stage", "init");
    m.meta.epoch = kv.get_uint("meta.epoch", 0);
  } catch (const ConfigError& e) {
    throw FormatError(FormatError::Kind::kMalformedHeader, e.what());
  }
  m.params = c.tensors;
  try {
    m.validate();
  } catch (const Error& e) {
    throw FormatError(FormatError::Kind::kMalformedHeader, source + ": " + e.what());
  }
  return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& m) {
  save_container(path, to_container(m));
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  return from_container(load_container(path), path.string());
}

}  // namespace ucount
