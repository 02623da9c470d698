#pragma once

// Counting network with a self-attention non-local block and two prediction heads:
//
//   image ─ trunk (5 convs, pools after 2nd and 4th) ─┬─ non-local convs ─ pool ─ 1×1 embed
//                                                     │      ─ self-attention × L ─ upsample ─┐
//                                                     └───────────── skip ───────────────────concat
//   concat ─ density branch:  conv, conv, up, conv, up, 1×1, ReLU     → mean
//          └ variance branch: same layout, softplus + floor           → variance

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ucount/data/grid.hpp"
#include "ucount/error.hpp"
#include "ucount/model/checkpoint.hpp"
#include "ucount/numerics/ops.hpp"

namespace ucount {

/// Per-pixel Gaussian prediction in physical density units.
struct PredictionPair {
  DenseGrid mean;
  DenseGrid variance;
};

/// Which parameter groups receive gradients on a tape.
struct TrainableGroups {
  bool trunk = false;
  bool nonlocal = false;
  bool density = false;
  bool variance = false;

  static TrainableGroups all() { return {true, true, true, true}; }
  static TrainableGroups none() { return {}; }

  bool contains(ParamGroup g) const {
    switch (g) {
      case ParamGroup::kTrunk: return trunk;
      case ParamGroup::kNonLocal: return nonlocal;
      case ParamGroup::kDensity: return density;
      case ParamGroup::kVariance: return variance;
    }
    return false;
  }
};

/// Inverted-dropout mask source; keeps each unit with probability 1 - rate, scaled by 1/(1 - rate).
class DropoutSampler {
 public:
  DropoutSampler(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {}

  double rate() const noexcept { return rate_; }

  Tensor mask(const Shape& shape) {
    Tensor m(shape);
    std::bernoulli_distribution keep(1.0 - rate_);
    const double s = 1.0 / (1.0 - rate_);
    for (double& v : m.data()) v = keep(rng_) ? s : 0.0;
    return m;
  }

 private:
  double rate_;
  std::mt19937_64 rng_;
};

/// Fixed 2-D sinusoidal encoding for an h×w token grid: first half of the channels encodes the row,
/// second half the column.
inline Tensor positional_encoding(std::size_t h, std::size_t w, std::size_t dim) {
  Tensor pe(Shape{h * w, dim});
  const std::size_t half = dim / 2;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      for (std::size_t k = 0; k < dim; ++k) {
        const bool row_part = k < half;
        const std::size_t kk = row_part ? k : k - half;
        const std::size_t span = row_part ? std::max<std::size_t>(half, 1) : std::max<std::size_t>(dim - half, 1);
        const double freq = std::pow(10000.0, -static_cast<double>(kk / 2 * 2) / static_cast<double>(span));
        const double pos = static_cast<double>(row_part ? r : c);
        pe.at(r * w + c, k) = kk % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
      }
    }
  }
  return pe;
}

struct AttentionWeights {
  Var query;
  Var key;
  Var value;
};

/// Stacked single-head self-attention, Z = softmax(X Wq (X Wk)^T) X Wv per layer, no residuals.
inline Var self_attention(Var tokens, const std::vector<AttentionWeights>& layers, bool scale_logits) {
  Var x = tokens;
  for (const AttentionWeights& w : layers) {
    Var q = matmul(x, w.query);
    Var k = matmul(x, w.key);
    Var v = matmul(x, w.value);
    Var logits = matmul(q, transpose(k));
    if (scale_logits) logits = scale(logits, 1.0 / std::sqrt(static_cast<double>(w.query.shape()[1])));
    x = matmul(softmax_rows(logits), v);
  }
  return x;
}

/// Head outputs in network units, each 1×H×W.
struct CtnOutputs {
  Var mean;
  Var variance;  ///< invalid when the architecture has no variance head
};

/// Binds a checkpoint's parameters to a tape and builds forward graphs over it.
class CtnGraph {
 public:
  CtnGraph(Tape& tape, const ModelCheckpoint& model, TrainableGroups trainable = TrainableGroups::none())
      : tape_(tape), arch_(model.arch) {
    model.validate();
    for (const auto& [name, t] : model.params) {
      vars_.emplace(name, trainable.contains(parameter_group(name)) ? tape.variable(t) : tape.constant(t));
    }
  }

  /// Uses caller-bound variables, one per name in parameter_shapes(arch).
  CtnGraph(Tape& tape, const ArchConfig& arch, std::map<std::string, Var> vars)
      : tape_(tape), arch_(arch), vars_(std::move(vars)) {
    for (const auto& [name, shape] : parameter_shapes(arch_)) {
      auto it = vars_.find(name);
      if (it == vars_.end()) throw ShapeError("missing parameter " + name);
      if (it->second.shape() != shape) throw ShapeError("parameter " + name + " has shape " + shape_str(it->second.shape()));
    }
  }

  const std::map<std::string, Var>& vars() const noexcept { return vars_; }

  /// `image` is C×H×W with H, W multiples of 8. A non-null sampler enables dropout.
  /// `with_variance = false` skips the variance branch (MSE-only passes).
  CtnOutputs build(const Tensor& image, DropoutSampler* dropout = nullptr, bool with_variance = true) {
    if (image.rank() != 3 || image.dim(0) != arch_.in_channels) {
      throw ShapeError("forward: expected a " + std::to_string(arch_.in_channels) + "×H×W image, got " +
                       shape_str(image.shape()));
    }
    if (image.dim(1) % 8 != 0 || image.dim(2) % 8 != 0) {
      throw ShapeError("forward: image extents " + shape_str(image.shape()) + " are not multiples of 8");
    }
    dropout_ = (dropout && dropout->rate() > 0.0) ? dropout : nullptr;

    Var x = tape_.constant(image);
    for (std::size_t i = 0; i < 5; ++i) {
      const std::string name = "trunk.conv" + std::to_string(i);
      x = checked(relu(conv(x, name, true)), name);
      if (i == 1 || i == 3) x = maxpool2x(x);
    }
    const Var local = x;

    for (std::size_t i = 0; i < arch_.nonlocal_widths.size(); ++i) {
      const std::string name = "nonlocal.conv" + std::to_string(i);
      x = checked(relu(conv(x, name, true)), name);
    }
    x = maxpool2x(x);
    const std::size_t h8 = x.shape()[1], w8 = x.shape()[2];
    Var tokens = map_to_tokens(checked(conv(x, "nonlocal.embed", true), "nonlocal.embed"));
    if (arch_.positional_encoding) tokens = add(tokens, tape_.constant(positional_encoding(h8, w8, arch_.embed_dim)));
    std::vector<AttentionWeights> layers;
    for (std::size_t l = 0; l < arch_.attention_layers; ++l) {
      const std::string p = "nonlocal.attn" + std::to_string(l) + ".";
      layers.push_back({vars_.at(p + "query"), vars_.at(p + "key"), vars_.at(p + "value")});
    }
    Var z = checked(self_attention(tokens, layers, arch_.scale_attention), "nonlocal.attention");
    Var features = concat_channels(local, upsample2x(tokens_to_map(z, h8, w8)));

    CtnOutputs out;
    out.mean = relu(branch(features, "density", false));
    if (arch_.variance_head && with_variance) {
      out.variance = add_scalar(softplus(branch(features, "variance", true), arch_.softplus_beta), arch_.variance_floor);
    }
    return out;
  }

 private:
  Var conv(Var x, const std::string& name, bool drop) {
    if (drop && dropout_) x = mul_const(x, dropout_->mask(x.shape()));
    return conv2d(x, vars_.at(name + ".weight"), vars_.at(name + ".bias"));
  }

  Var branch(Var x, const std::string& prefix, bool drop) {
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string name = prefix + ".conv" + std::to_string(i);
      x = checked(conv(x, name, drop), name);
      if (i < 3) x = relu(x);
      if (i == 1 || i == 2) x = upsample2x(x);
    }
    return x;
  }

  static Var checked(Var v, const std::string& layer) {
    if (!v.value().all_finite()) throw NumericalError("non-finite activation in layer " + layer);
    return v;
  }

  Tape& tape_;
  ArchConfig arch_;
  std::map<std::string, Var> vars_;
  DropoutSampler* dropout_ = nullptr;
};

/// He-scaled normal weights, zero biases; the variance head starts near softplus(.) = 1.
inline ModelCheckpoint init_model(const ArchConfig& arch, std::uint64_t seed) {
  ModelCheckpoint m;
  m.arch = arch;
  m.meta.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (const auto& [name, shape] : parameter_shapes(arch)) {
    Tensor t(shape);
    const bool is_bias = name.ends_with(".bias");
    const bool is_attention = name.find(".attn") != std::string::npos;
    const bool is_head = name.ends_with("conv3.weight") && name.rfind("trunk", 0) != 0;
    if (!is_bias) {
      double stddev = 0.0;
      if (is_attention) {
        stddev = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      } else {
        const double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
        stddev = std::sqrt((is_head ? 1.0 : 2.0) / fan_in);
        if (is_head && name.rfind("variance", 0) == 0) stddev *= 0.1;
      }
      for (double& v : t.data()) v = stddev * normal(rng);
      // Non-negative features into a non-negative 1×1 head: the output ReLU cannot start dead.
      if (name == "density.conv3.weight") {
        for (double& v : t.data()) v = std::abs(v);
      }
    } else if (name == "variance.conv3.bias") {
      // softplus(b) = 1
      const double beta = arch.softplus_beta;
      t[0] = std::log(std::expm1(beta)) / beta;
    }
    m.params.emplace(name, std::move(t));
  }
  return m;
}

inline void require_network_input(const DenseGrid& image) {
  if (image.empty() || image.height() % 8 != 0 || image.width() % 8 != 0) {
    throw ShapeError("forward: image extents " + std::to_string(image.height()) + "x" + std::to_string(image.width()) +
                     " are not positive multiples of 8");
  }
}

/// Deterministic prediction (dropout off). Without a variance head the variance map is the floor.
inline PredictionPair forward(const ModelCheckpoint& model, const DenseGrid& image) {
  require_network_input(image);
  Tape tape;
  CtnGraph graph(tape, model);
  CtnOutputs out = graph.build(image.to_tensor());
  const double s = model.arch.density_scale;
  PredictionPair p;
  p.mean = DenseGrid::from_tensor(out.mean.value());
  for (double& v : p.mean.data()) v /= s;
  if (out.variance.valid()) {
    p.variance = DenseGrid::from_tensor(out.variance.value());
    for (double& v : p.variance.data()) v /= s * s;
  } else {
    p.variance = DenseGrid(image.height(), image.width(), model.arch.min_variance());
  }
  return p;
}

struct McPrediction {
  DenseGrid mean;
  DenseGrid epistemic_variance;
};

/// Monte Carlo dropout: sample mean and unbiased sample variance of `passes` stochastic density maps.
inline McPrediction mc_forward(const ModelCheckpoint& model, const DenseGrid& image, std::size_t passes,
                               std::uint64_t seed) {
  if (passes < 2) throw ArgumentError("mc_forward: at least 2 passes are needed for a variance");
  require_network_input(image);
  const Tensor input = image.to_tensor();
  const double s = model.arch.density_scale;
  DropoutSampler sampler(model.arch.dropout, seed);
  const std::size_t n = image.size();
  std::vector<double> mean(n, 0.0), m2(n, 0.0);
  for (std::size_t t = 0; t < passes; ++t) {
    Tape tape;
    CtnGraph graph(tape, model);
    const Tensor& y = graph.build(input, &sampler).mean.value();
    const double count = static_cast<double>(t + 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double v = y[i] / s;
      const double delta = v - mean[i];
      mean[i] += delta / count;
      m2[i] += delta * (v - mean[i]);
    }
  }
  for (double& v : m2) v /= static_cast<double>(passes - 1);
  return McPrediction{DenseGrid(image.height(), image.width(), std::move(mean)),
                      DenseGrid(image.height(), image.width(), std::move(m2))};
}

}  // namespace ucount
