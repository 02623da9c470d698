#pragma once

// Three-stage schedule (MSE warm-up with the variance branch frozen, variance branch alone on NLL,
// everything on NLL), finetuning with a frozen variance branch, and committee construction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ucount/data/io.hpp"
#include "ucount/data/sample.hpp"
#include "ucount/error.hpp"
#include "ucount/key_value.hpp"
#include "ucount/model/ctn.hpp"
#include "ucount/training/losses.hpp"

namespace ucount {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 4;
  std::size_t stage1_epochs = 20;
  std::size_t stage2_epochs = 5;
  std::size_t stage3_epochs = 10;
  std::size_t finetune_epochs = 60;
  double finetune_learning_rate = 1e-4;
  std::size_t crop_size = 64;  ///< clamped to the sample extents
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 1;
  // Frozen on top of whatever the current stage freezes.
  bool freeze_trunk = false;
  bool freeze_nonlocal = false;
  bool freeze_density = false;
  bool freeze_variance = false;

  void validate() const {
    auto fail = [](const std::string& what) { throw ArgumentError("train: " + what); };
    if (!(learning_rate > 0.0) || !(finetune_learning_rate > 0.0)) fail("learning rates must be positive");
    if (batch_size == 0) fail("batch size must be positive");
    if (crop_size == 0 || crop_size % 8 != 0) fail("crop size must be a positive multiple of 8");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("moment decay rates must lie in [0, 1)");
    if (!(adam_epsilon > 0.0)) fail("adam epsilon must be positive");
  }

  std::string to_text(const std::string& prefix = "train.") const {
    std::ostringstream os;
    os << prefix << "learning_rate=" << format_double(learning_rate) << "\n"
       << prefix << "batch_size=" << batch_size << "\n"
       << prefix << "stage1_epochs=" << stage1_epochs << "\n"
       << prefix << "stage2_epochs=" << stage2_epochs << "\n"
       << prefix << "stage3_epochs=" << stage3_epochs << "\n"
       << prefix << "finetune_epochs=" << finetune_epochs << "\n"
       << prefix << "finetune_learning_rate=" << format_double(finetune_learning_rate) << "\n"
       << prefix << "crop_size=" << crop_size << "\n"
       << prefix << "beta1=" << format_double(beta1) << "\n"
       << prefix << "beta2=" << format_double(beta2) << "\n"
       << prefix << "adam_epsilon=" << format_double(adam_epsilon) << "\n"
       << prefix << "seed=" << seed << "\n"
       << prefix << "freeze_trunk=" << (freeze_trunk ? "true" : "false") << "\n"
       << prefix << "freeze_nonlocal=" << (freeze_nonlocal ? "true" : "false") << "\n"
       << prefix << "freeze_density=" << (freeze_density ? "true" : "false") << "\n"
       << prefix << "freeze_variance=" << (freeze_variance ? "true" : "false") << "\n";
    return os.str();
  }

  static TrainConfig from_keys(const KeyValues& kv, const std::string& prefix = "train.") {
    TrainConfig c;
    c.learning_rate = kv.get_double(prefix + "learning_rate", c.learning_rate);
    c.batch_size = kv.get_uint(prefix + "batch_size", c.batch_size);
    c.stage1_epochs = kv.get_uint(prefix + "stage1_epochs", c.stage1_epochs);
    c.stage2_epochs = kv.get_uint(prefix + "stage2_epochs", c.stage2_epochs);
    c.stage3_epochs = kv.get_uint(prefix + "stage3_epochs", c.stage3_epochs);
    c.finetune_epochs = kv.get_uint(prefix + "finetune_epochs", c.finetune_epochs);
    c.finetune_learning_rate = kv.get_double(prefix + "finetune_learning_rate", c.finetune_learning_rate);
    c.crop_size = kv.get_uint(prefix + "crop_size", c.crop_size);
    c.beta1 = kv.get_double(prefix + "beta1", c.beta1);
    c.beta2 = kv.get_double(prefix + "beta2", c.beta2);
    c.adam_epsilon = kv.get_double(prefix + "adam_epsilon", c.adam_epsilon);
    c.seed = kv.get_uint(prefix + "seed", c.seed);
    c.freeze_trunk = kv.get_bool(prefix + "freeze_trunk", c.freeze_trunk);
    c.freeze_nonlocal = kv.get_bool(prefix + "freeze_nonlocal", c.freeze_nonlocal);
    c.freeze_density = kv.get_bool(prefix + "freeze_density", c.freeze_density);
    c.freeze_variance = kv.get_bool(prefix + "freeze_variance", c.freeze_variance);
    return c;
  }

  static std::vector<std::string> keys(const std::string& prefix = "train.") {
    std::vector<std::string> out;
    for (const char* k : {"learning_rate", "batch_size", "stage1_epochs", "stage2_epochs", "stage3_epochs",
                          "finetune_epochs", "finetune_learning_rate", "crop_size", "beta1", "beta2", "adam_epsilon",
                          "seed", "freeze_trunk", "freeze_nonlocal", "freeze_density", "freeze_variance"}) {
      out.push_back(prefix + k);
    }
    return out;
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// One row per epoch: optimizer steps taken so far, stage tag, epoch-mean loss.
struct LossRecord {
  std::size_t step = 0;
  std::string stage;
  double loss = 0.0;
};

using LossHistory = std::vector<LossRecord>;

struct TrainResult {
  ModelCheckpoint model;
  LossHistory history;
};

inline void save_history_csv(const std::filesystem::path& path, const LossHistory& history) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + path.string());
  out << "step,stage,loss\n";
  for (const LossRecord& r : history) out << r.step << "," << r.stage << "," << format_double(r.loss) << "\n";
}

inline LossHistory load_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "step,stage,loss") {
    throw FormatError(FormatError::Kind::kMalformedHeader, path.string() + ": bad loss history header");
  }
  LossHistory h;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b) throw FormatError(FormatError::Kind::kMalformedHeader, path.string() + ": bad row");
    h.push_back({std::stoull(line.substr(0, a)), line.substr(a + 1, b - a - 1), std::stod(line.substr(b + 1))});
  }
  return h;
}

/// Adam over the trainable subset of a parameter map.
class Adam {
 public:
  explicit Adam(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(std::map<std::string, Tensor>& params, const std::map<std::string, std::vector<double>>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(g.size(), 0.0);
        v.assign(g.size(), 0.0);
      }
      auto p = params.at(name).data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        p[i] -= cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.adam_epsilon);
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

enum class LossKind { kMse, kNll };

struct StagePlan {
  std::string name;
  std::size_t epochs = 0;
  LossKind loss = LossKind::kMse;
  TrainableGroups trainable;
};

namespace detail {

struct TrainingPair {
  Tensor image;   // 1×c×c
  Tensor target;  // 1×c×c, network units
};

inline TrainingPair random_crop(const Sample& s, std::size_t crop, double scale, std::mt19937_64& rng) {
  const std::size_t h = s.image.height(), w = s.image.width();
  const std::size_t ch = std::min(crop, h), cw = std::min(crop, w);
  if (ch % 8 != 0 || cw % 8 != 0) {
    throw ShapeError("training crop " + std::to_string(ch) + "x" + std::to_string(cw) + " of sample " + s.id +
                     " is not a multiple of 8");
  }
  std::uniform_int_distribution<std::size_t> top(0, h - ch), left(0, w - cw);
  const std::size_t t = top(rng), l = left(rng);
  TrainingPair p{s.image.region(t, l, ch, cw).to_tensor(), s.gt_density.region(t, l, ch, cw).to_tensor()};
  for (double& v : p.target.data()) v *= scale;
  return p;
}

inline TrainableGroups apply_freeze(TrainableGroups g, const TrainConfig& cfg, bool has_variance) {
  g.trunk = g.trunk && !cfg.freeze_trunk;
  g.nonlocal = g.nonlocal && !cfg.freeze_nonlocal;
  g.density = g.density && !cfg.freeze_density;
  g.variance = g.variance && !cfg.freeze_variance && has_variance;
  return g;
}

inline void run_stage(ModelCheckpoint& model, const std::vector<Sample>& data, const TrainConfig& cfg,
                      const StagePlan& plan, std::mt19937_64& rng, std::size_t& global_step, LossHistory& history) {
  if (plan.epochs == 0) return;
  const TrainableGroups trainable = apply_freeze(plan.trainable, cfg, model.arch.variance_head);
  const bool use_nll = plan.loss == LossKind::kNll && model.arch.variance_head;
  const double scale = model.arch.density_scale;
  Adam adam(cfg);
  DropoutSampler dropout(model.arch.dropout, rng());
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      std::map<std::string, std::vector<double>> grads;
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const detail::TrainingPair pair = random_crop(data[order[b]], cfg.crop_size, scale, rng);
        Tape tape;
        CtnGraph graph(tape, model, trainable);
        Var loss;
        try {
          CtnOutputs out = graph.build(pair.image, &dropout, use_nll);
          loss = use_nll ? nll_loss(out.mean, out.variance, pair.target) : mse_loss(out.mean, pair.target);
        } catch (const NumericalError& e) {
          throw NumericalError("stage " + plan.name + " step " + std::to_string(global_step) + " (sample " +
                               data[order[b]].id + "): " + e.what());
        }
        const double value = loss.value().item();
        if (!std::isfinite(value)) {
          throw NumericalError("non-finite loss in stage " + plan.name + " at step " + std::to_string(global_step) +
                               " (sample " + data[order[b]].id + ")");
        }
        batch_loss += value;
        tape.backward(loss);
        for (const auto& [name, var] : graph.vars()) {
          if (!var.requires_grad()) continue;
          const Tensor g = var.grad();
          auto& acc = grads[name];
          if (acc.empty()) acc.assign(g.size(), 0.0);
          for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i] * inv_batch;
        }
      }
      for (const auto& [name, g] : grads) {
        for (double v : g) {
          if (!std::isfinite(v)) {
            throw NumericalError("non-finite gradient for " + name + " in stage " + plan.name + " at step " +
                                 std::to_string(global_step));
          }
        }
      }
      adam.step(model.params, grads);
      ++global_step;
      epoch_loss += batch_loss;
    }
    history.push_back({global_step, plan.name, epoch_loss / static_cast<double>(data.size())});
    model.meta.stage = plan.name;
    model.meta.epoch = epoch + 1;
  }
}

}  // namespace detail

/// Stage plans of the full schedule. Without a variance head (MC-dropout variant) stage 2 has
/// nothing to train and stages 1 and 3 use MSE.
inline std::vector<StagePlan> schedule(const TrainConfig& cfg) {
  const TrainableGroups no_variance{true, true, true, false};
  const TrainableGroups variance_only{false, false, false, true};
  return {{"s1", cfg.stage1_epochs, LossKind::kMse, no_variance},
          {"s2", cfg.stage2_epochs, LossKind::kNll, variance_only},
          {"s3", cfg.stage3_epochs, LossKind::kNll, TrainableGroups::all()}};
}

inline void require_training_data(const std::vector<Sample>& data, const char* what) {
  if (data.empty()) throw ArgumentError(std::string(what) + ": no training samples");
}

inline TrainResult train(ModelCheckpoint model, const std::vector<Sample>& data, const TrainConfig& cfg) {
  cfg.validate();
  model.validate();
  require_training_data(data, "train");
  std::mt19937_64 rng(cfg.seed);
  std::size_t step = 0;
  LossHistory history;
  for (const StagePlan& plan : schedule(cfg)) {
    if (plan.name == "s2" && !model.arch.variance_head) continue;
    detail::run_stage(model, data, cfg, plan, rng, step, history);
  }
  return {std::move(model), std::move(history)};
}

/// NLL on the selected samples with the variance branch frozen, at the finetune learning rate.
inline TrainResult finetune(ModelCheckpoint model, const std::vector<Sample>& selected, TrainConfig cfg) {
  cfg.validate();
  cfg.learning_rate = cfg.finetune_learning_rate;
  model.validate();
  require_training_data(selected, "finetune");
  std::mt19937_64 rng(cfg.seed ^ 0x5eed'f1e7ULL);
  std::size_t step = 0;
  LossHistory history;
  detail::run_stage(model, selected, cfg, {"finetune", cfg.finetune_epochs, LossKind::kNll, {true, true, true, false}},
                    rng, step, history);
  return {std::move(model), std::move(history)};
}

/// Seeded 50/50-style split of `data` into `members` disjoint, near-equal parts.
inline std::vector<std::vector<Sample>> committee_split(const std::vector<Sample>& data, std::size_t members,
                                                        std::uint64_t seed) {
  if (members < 2) throw ArgumentError("committee: at least 2 members are needed");
  if (data.size() < members) throw ArgumentError("committee: fewer samples than members");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Sample>> parts(members);
  for (std::size_t i = 0; i < order.size(); ++i) parts[i * members / order.size()].push_back(data[order[i]]);
  return parts;
}

/// One member per split part, each with its own init and training seed.
inline std::vector<TrainResult> train_committee(const ArchConfig& arch, const std::vector<Sample>& data,
                                                const TrainConfig& cfg, std::size_t members = 2) {
  const auto parts = committee_split(data, members, cfg.seed);
  std::vector<TrainResult> out;
  for (std::size_t m = 0; m < members; ++m) {
    TrainConfig c = cfg;
    c.seed = cfg.seed * 1000 + 101 * (m + 1);
    out.push_back(train(init_model(arch, c.seed), parts[m], c));
  }
  return out;
}

}  // namespace ucount
