#pragma once

// Experiment configuration: one flat key=value file covering domains, model, training, selection
// and sparsification, plus the per-seed derivation of every RNG seed and the workspace layout.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ucount/data/generator.hpp"
#include "ucount/data/io.hpp"
#include "ucount/error.hpp"
#include "ucount/key_value.hpp"
#include "ucount/model/checkpoint.hpp"
#include "ucount/selection/selection.hpp"
#include "ucount/training/trainer.hpp"

namespace ucount {

namespace fs = std::filesystem;

inline std::string domain_to_text(const DomainConfig& d, const std::string& prefix) {
  std::ostringstream os;
  os << prefix << "height=" << d.height << "\n"
     << prefix << "width=" << d.width << "\n"
     << prefix << "count_min=" << d.count_min << "\n"
     << prefix << "count_max=" << d.count_max << "\n"
     << prefix << "radius_min=" << format_double(d.radius_min) << "\n"
     << prefix << "radius_max=" << format_double(d.radius_max) << "\n"
     << prefix << "texture_amplitude=" << format_double(d.texture_amplitude) << "\n"
     << prefix << "clutter_rate=" << format_double(d.clutter_rate) << "\n"
     << prefix << "sigma_k=" << format_double(d.sigma_k) << "\n";
  return os.str();
}

/// Reads `prefix`* keys on top of `base`. The seed is not part of the file; it is derived per run.
inline DomainConfig domain_from_keys(const KeyValues& kv, const std::string& prefix, DomainConfig base) {
  base.height = kv.get_uint(prefix + "height", base.height);
  base.width = kv.get_uint(prefix + "width", base.width);
  base.count_min = kv.get_uint(prefix + "count_min", base.count_min);
  base.count_max = kv.get_uint(prefix + "count_max", base.count_max);
  base.radius_min = kv.get_double(prefix + "radius_min", base.radius_min);
  base.radius_max = kv.get_double(prefix + "radius_max", base.radius_max);
  base.texture_amplitude = kv.get_double(prefix + "texture_amplitude", base.texture_amplitude);
  base.clutter_rate = kv.get_double(prefix + "clutter_rate", base.clutter_rate);
  base.sigma_k = kv.get_double(prefix + "sigma_k", base.sigma_k);
  return base;
}

inline std::vector<std::string> domain_keys(const std::string& prefix) {
  std::vector<std::string> out;
  for (const char* k : {"height", "width", "count_min", "count_max", "radius_min", "radius_max", "texture_amplitude",
                        "clutter_rate", "sigma_k"}) {
    out.push_back(prefix + k);
  }
  return out;
}

enum class Level { kImage, kCrop };

inline std::string level_name(Level l) { return l == Level::kImage ? "image" : "crop"; }

inline Level parse_level(const std::string& s) {
  if (s == "image") return Level::kImage;
  if (s == "crop") return Level::kCrop;
  throw ConfigError("unknown selection level '" + s + "' (expected image or crop)");
}

struct ExperimentConfig {
  fs::path workspace = "ucount_workspace";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};

  DomainConfig source;
  DomainConfig target = DomainConfig{}.shifted(0);
  std::size_t source_train = 120;
  std::size_t source_test = 40;
  std::size_t target_pool = 200;
  std::size_t target_test = 60;

  ArchConfig arch;
  double mc_dropout = 0.2;
  std::size_t mc_passes = 32;
  TrainConfig train;
  std::size_t committee_members = 2;

  std::vector<Strategy> strategies{Strategy::kRandom, Strategy::kCount, Strategy::kAleatoric, Strategy::kKl,
                                   Strategy::kDensityDiff};
  std::vector<std::size_t> budgets{17, 33};
  KlMode kl_mode = KlMode::kDirected;
  std::size_t crop_rows = 4;
  std::size_t crop_cols = 4;

  std::size_t sparsify_steps = 20;
  bool sparsify_per_image = false;

  void validate() const {
    auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
    if (seeds.empty()) fail("at least one seed is required");
    for (std::size_t i = 0; i < seeds.size(); ++i)
      for (std::size_t j = i + 1; j < seeds.size(); ++j)
        if (seeds[i] == seeds[j]) fail("duplicate seed " + std::to_string(seeds[i]));
    try {
      source.validate();
      target.validate();
      arch.validate();
      arch.mc_dropout_variant(mc_dropout).validate();
      train.validate();
    } catch (const ArgumentError& e) {
      fail(e.what());
    }
    if (source.height != target.height || source.width != target.width) fail("source and target extents differ");
    if (source_train < committee_members) fail("fewer source training samples than committee members");
    if (source_test == 0 || target_pool == 0 || target_test == 0) fail("every split needs at least one sample");
    if (mc_passes < 2) fail("mc.passes must be at least 2");
    if (committee_members < 2) fail("committee.members must be at least 2");
    if (strategies.empty()) fail("at least one selection strategy is required");
    for (std::size_t k : budgets) {
      if (k == 0 || k > target_pool) {
        fail("budget " + std::to_string(k) + " must lie in [1, " + std::to_string(target_pool) + "]");
      }
    }
    if (crop_rows == 0 || crop_cols == 0 || target.height % crop_rows || target.width % crop_cols) {
      fail("crop grid does not divide the target images");
    }
    if ((target.height / crop_rows) % 8 || (target.width / crop_cols) % 8) fail("crop extents must be multiples of 8");
    if (sparsify_steps < 2) fail("sparsify.steps must be at least 2");
  }

  std::string to_text() const {
    std::ostringstream os;
    auto join = [](const auto& xs, auto&& f) {
      std::string s;
      for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + f(xs[i]);
      return s;
    };
    os << "experiment.seeds=" << join(seeds, [](auto v) { return std::to_string(v); }) << "\n"
       << "experiment.source_train=" << source_train << "\n"
       << "experiment.source_test=" << source_test << "\n"
       << "experiment.target_pool=" << target_pool << "\n"
       << "experiment.target_test=" << target_test << "\n"
       << domain_to_text(source, "source.") << domain_to_text(target, "target.") << arch.to_text()
       << "mc.dropout=" << format_double(mc_dropout) << "\n"
       << "mc.passes=" << mc_passes << "\n"
       << train.to_text() << "committee.members=" << committee_members << "\n"
       << "selection.strategies=" << join(strategies, [](Strategy s) { return strategy_name(s); }) << "\n"
       << "selection.budgets=" << join(budgets, [](auto v) { return std::to_string(v); }) << "\n"
       << "selection.kl_mode=" << (kl_mode == KlMode::kDirected ? "directed" : "symmetric") << "\n"
       << "selection.crop_rows=" << crop_rows << "\n"
       << "selection.crop_cols=" << crop_cols << "\n"
       << "sparsify.steps=" << sparsify_steps << "\n"
       << "sparsify.pooling=" << (sparsify_per_image ? "per_image" : "pooled") << "\n";
    return os.str();
  }

  static std::vector<std::string> keys() {
    std::vector<std::string> k{"workspace",
                               "experiment.seeds",
                               "experiment.source_train",
                               "experiment.source_test",
                               "experiment.target_pool",
                               "experiment.target_test",
                               "mc.dropout",
                               "mc.passes",
                               "committee.members",
                               "selection.strategies",
                               "selection.budgets",
                               "selection.kl_mode",
                               "selection.crop_rows",
                               "selection.crop_cols",
                               "sparsify.steps",
                               "sparsify.pooling"};
    auto append = [&](const std::vector<std::string>& more) { k.insert(k.end(), more.begin(), more.end()); };
    append(domain_keys("source."));
    append(domain_keys("target."));
    append(ArchConfig::keys());
    append(TrainConfig::keys());
    return k;
  }

  /// Unset target keys follow the shifted source domain.
  static ExperimentConfig from_keys(const KeyValues& kv) {
    kv.require_known(keys());
    ExperimentConfig c;
    c.workspace = kv.get_string("workspace", c.workspace.string());
    c.seeds = kv.get_uint_list("experiment.seeds", c.seeds);
    c.source_train = kv.get_uint("experiment.source_train", c.source_train);
    c.source_test = kv.get_uint("experiment.source_test", c.source_test);
    c.target_pool = kv.get_uint("experiment.target_pool", c.target_pool);
    c.target_test = kv.get_uint("experiment.target_test", c.target_test);
    c.source = domain_from_keys(kv, "source.", DomainConfig{});
    c.target = domain_from_keys(kv, "target.", c.source.shifted(0));
    c.arch = ArchConfig::from_keys(kv);
    c.mc_dropout = kv.get_double("mc.dropout", c.mc_dropout);
    c.mc_passes = kv.get_uint("mc.passes", c.mc_passes);
    c.train = TrainConfig::from_keys(kv);
    c.committee_members = kv.get_uint("committee.members", c.committee_members);
    if (kv.has("selection.strategies")) {
      c.strategies.clear();
      for (const auto& name : kv.get_string_list("selection.strategies", {})) {
        try {
          c.strategies.push_back(parse_strategy(name));
        } catch (const ConfigError& e) {
          throw ConfigError(kv.source() + ":" + std::to_string(kv.entries().at("selection.strategies").line) + ": " +
                            e.what());
        }
      }
    }
    if (kv.has("selection.budgets")) {
      c.budgets.clear();
      for (auto b : kv.get_uint_list("selection.budgets", {})) c.budgets.push_back(b);
    }
    auto choice = [&](const std::string& key, const std::string& a, const std::string& b, bool fallback) {
      if (!kv.has(key)) return fallback;
      const std::string v = kv.get_string(key, "");
      if (v == a) return true;
      if (v == b) return false;
      throw ConfigError(kv.source() + ":" + std::to_string(kv.entries().at(key).line) + ": " + key + ": expected " + a +
                        " or " + b + " (got '" + v + "')");
    };
    c.kl_mode = choice("selection.kl_mode", "directed", "symmetric", true) ? KlMode::kDirected : KlMode::kSymmetric;
    c.crop_rows = kv.get_uint("selection.crop_rows", c.crop_rows);
    c.crop_cols = kv.get_uint("selection.crop_cols", c.crop_cols);
    c.sparsify_steps = kv.get_uint("sparsify.steps", c.sparsify_steps);
    c.sparsify_per_image = !choice("sparsify.pooling", "pooled", "per_image", true);
    c.validate();
    return c;
  }

  static ExperimentConfig parse(const std::string& text, const std::string& source) {
    return from_keys(KeyValues::parse(text, source));
  }

  static ExperimentConfig load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }
};

/// Every seed used by one run, derived from the run seed.
struct RunSeeds {
  std::uint64_t run = 1;

  std::uint64_t source_train() const { return run * 100 + 1; }
  std::uint64_t source_test() const { return run * 100 + 2; }
  std::uint64_t target_pool() const { return run * 100 + 3; }
  std::uint64_t target_test() const { return run * 100 + 4; }
  std::uint64_t ctn_init() const { return run; }
  std::uint64_t mc_init() const { return run + 7; }
  std::uint64_t training() const { return run; }
  std::uint64_t selection() const { return run; }
  std::uint64_t mc_forward() const { return run * 100 + 5; }
};

/// Paths of one run's artifacts under <workspace>/seed_<n>/.
class RunLayout {
 public:
  RunLayout(const fs::path& workspace, std::uint64_t seed)
      : root_(workspace / ("seed_" + std::to_string(seed))), seed_(seed) {}

  const fs::path& root() const { return root_; }
  std::uint64_t seed() const { return seed_; }

  fs::path manifest() const { return root_ / "manifest.txt"; }
  fs::path data(const std::string& split) const { return root_ / "data" / split; }
  fs::path model(const std::string& name) const { return root_ / "models" / (name + ".ckpt"); }
  fs::path history(const std::string& name) const { return root_ / "models" / (name + ".history.csv"); }
  fs::path scores(Level l, Strategy s) const {
    return root_ / "scores" / (level_name(l) + "_" + strategy_name(s) + ".csv");
  }
  fs::path selection(Level l, Strategy s, std::size_t budget) const {
    return root_ / "selections" / (tag(l, s, budget) + ".split");
  }
  fs::path finetuned(Level l, Strategy s, std::size_t budget) const {
    return root_ / "finetuned" / (tag(l, s, budget) + ".ckpt");
  }
  fs::path report(const std::string& name) const { return root_ / "reports" / (name + ".csv"); }
  fs::path eval_report(Level l, Strategy s, std::size_t budget) const { return report(tag(l, s, budget)); }
  fs::path sparsification(const std::string& name) const { return root_ / "sparsification" / name; }

  /// Crop-level runs select one crop per pool image, so their budget is the pool size.
  static std::string tag(Level l, Strategy s, std::size_t budget) {
    return level_name(l) + "_" + strategy_name(s) + (l == Level::kImage ? "_k" + std::to_string(budget) : "");
  }

 private:
  fs::path root_;
  std::uint64_t seed_;
};

/// Workspace override order: explicit flag, then UCOUNT_WORKSPACE, then the config file.
inline fs::path resolve_workspace(const ExperimentConfig& cfg, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("UCOUNT_WORKSPACE"); env != nullptr && *env != '\0') return env;
  return cfg.workspace;
}

}  // namespace ucount
