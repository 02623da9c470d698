#pragma once

// Pipeline steps behind the CLI subcommands. Each step reads its inputs from the workspace,
// writes its outputs there, and is deterministic given the configuration.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "ucount/data/crop.hpp"
#include "ucount/data/generator.hpp"
#include "ucount/data/io.hpp"
#include "ucount/eval/metrics.hpp"
#include "ucount/experiment/config.hpp"
#include "ucount/model/checkpoint.hpp"
#include "ucount/model/ctn.hpp"
#include "ucount/selection/selection.hpp"
#include "ucount/training/trainer.hpp"
#include "ucount/uncertainty/sparsification.hpp"

namespace ucount {

namespace detail {

inline std::string manifest_text(const ExperimentConfig& cfg, std::uint64_t seed) {
  std::ostringstream os;
  os << "ucount-workspace=1\n"
     << "seed=" << seed << "\n"
     << "experiment.source_train=" << cfg.source_train << "\n"
     << "experiment.source_test=" << cfg.source_test << "\n"
     << "experiment.target_pool=" << cfg.target_pool << "\n"
     << "experiment.target_test=" << cfg.target_test << "\n"
     << domain_to_text(cfg.source, "source.") << domain_to_text(cfg.target, "target.");
  return os.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + path.string());
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Data of a run must exist and match the configuration it was generated with.
inline void require_data(const ExperimentConfig& cfg, const RunLayout& run) {
  if (!fs::exists(run.manifest())) {
    throw PrerequisiteError(run.root().string() + ": no generated data; run `ucount gen` first");
  }
  if (read_text(run.manifest()) != manifest_text(cfg, run.seed())) {
    throw PrerequisiteError(run.root().string() +
                            ": data was generated with a different domain configuration; rerun `ucount gen`");
  }
}

inline std::vector<Sample> load_split(const ExperimentConfig& cfg, const RunLayout& run, const std::string& split) {
  require_data(cfg, run);
  return SampleStore(run.data(split)).load_all();
}

inline ModelCheckpoint load_model(const RunLayout& run, const std::string& name, const std::string& producer) {
  const fs::path path = run.model(name);
  if (!fs::exists(path)) {
    throw PrerequisiteError(path.string() + " is missing; run `ucount " + producer + "` first");
  }
  return load_checkpoint(path);
}

inline std::vector<ModelCheckpoint> load_committee(const ExperimentConfig& cfg, const RunLayout& run) {
  std::vector<ModelCheckpoint> out;
  for (std::size_t m = 0; m < cfg.committee_members; ++m) {
    out.push_back(load_model(run, "committee_" + std::to_string(m), "train"));
  }
  return out;
}

inline TrainConfig run_train_config(const ExperimentConfig& cfg, const RunSeeds& seeds) {
  TrainConfig t = cfg.train;
  t.seed = seeds.training();
  return t;
}

inline std::vector<std::size_t> image_budgets(const ExperimentConfig& cfg, Level level) {
  return level == Level::kImage ? cfg.budgets : std::vector<std::size_t>{cfg.target_pool};
}

// Crop scores: one row per (image, crop).
inline void save_crop_scores(const fs::path& path, const std::vector<std::string>& ids,
                             const std::vector<std::vector<double>>& scores) {
  std::string text = "id,crop,score\n";
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t k = 0; k < scores[i].size(); ++k) {
      text += ids[i] + "," + std::to_string(k) + "," + format_double(scores[i][k]) + "\n";
    }
  write_text(path, text);
}

inline std::map<std::string, std::vector<double>> load_crop_scores(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "id,crop,score") {
    throw FormatError(FormatError::Kind::kMalformedHeader, path.string() + ": bad crop-score header");
  }
  std::map<std::string, std::vector<double>> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto a = line.find(','), b = line.rfind(',');
    if (a == std::string::npos || a == b) {
      throw FormatError(FormatError::Kind::kMalformedHeader, path.string() + ":" + std::to_string(lineno) + ": bad row");
    }
    auto& v = out[line.substr(0, a)];
    if (std::stoull(line.substr(a + 1, b - a - 1)) != v.size()) {
      throw FormatError(FormatError::Kind::kMalformedHeader,
                        path.string() + ":" + std::to_string(lineno) + ": crops out of order");
    }
    v.push_back(parse_double(line.substr(b + 1), path.string()));
  }
  return out;
}

inline void save_history(const RunLayout& run, const std::string& name, const LossHistory& h) {
  fs::create_directories(run.history(name).parent_path());
  save_history_csv(run.history(name), h);
}

inline std::string final_loss(const LossHistory& h) {
  return h.empty() ? "n/a" : format_double(h.back().loss);
}

}  // namespace detail

/// Generates the four splits of every run, replacing earlier data.
inline void cmd_gen(const ExperimentConfig& cfg, const fs::path& workspace, std::ostream& log) {
  cfg.validate();
  for (std::uint64_t seed : cfg.seeds) {
    const RunLayout run(workspace, seed);
    const RunSeeds seeds{seed};
    struct Split {
      const char* name;
      const char* prefix;
      DomainConfig domain;
      std::uint64_t seed;
      std::size_t n;
    };
    const Split splits[] = {{"source_train", "tr", cfg.source, seeds.source_train(), cfg.source_train},
                            {"source_test", "te", cfg.source, seeds.source_test(), cfg.source_test},
                            {"target_pool", "pool", cfg.target, seeds.target_pool(), cfg.target_pool},
                            {"target_test", "tt", cfg.target, seeds.target_test(), cfg.target_test}};
    fs::remove_all(run.root() / "data");
    for (Split sp : splits) {
      sp.domain.seed = sp.seed;
      SampleStore(run.data(sp.name)).save_all(generate_domain(sp.domain, sp.n, sp.prefix));
    }
    detail::write_text(run.manifest(), detail::manifest_text(cfg, seed));
    log << "[seed " << seed << "] gen: " << cfg.source_train << "/" << cfg.source_test << " source, "
        << cfg.target_pool << "/" << cfg.target_test << " target samples\n";
  }
}

/// Trains the source CTN, the committee and the MC-dropout variant of every run.
inline void cmd_train(const ExperimentConfig& cfg, const fs::path& workspace, std::ostream& log) {
  cfg.validate();
  for (std::uint64_t seed : cfg.seeds) {
    const RunLayout run(workspace, seed);
    const RunSeeds seeds{seed};
    const auto data = detail::load_split(cfg, run, "source_train");
    const TrainConfig tc = detail::run_train_config(cfg, seeds);
    fs::create_directories(run.model("ctn").parent_path());

    TrainResult ctn = train(init_model(cfg.arch, seeds.ctn_init()), data, tc);
    ctn.model.meta.seed = seeds.ctn_init();
    save_checkpoint(run.model("ctn"), ctn.model);
    detail::save_history(run, "ctn", ctn.history);
    log << "[seed " << seed << "] train: ctn final loss " << detail::final_loss(ctn.history) << "\n";

    const std::vector<TrainResult> committee = train_committee(cfg.arch, data, tc, cfg.committee_members);
    for (std::size_t m = 0; m < committee.size(); ++m) {
      save_checkpoint(run.model("committee_" + std::to_string(m)), committee[m].model);
      detail::save_history(run, "committee_" + std::to_string(m), committee[m].history);
    }
    log << "[seed " << seed << "] train: committee of " << committee.size() << "\n";

    TrainResult mc = train(init_model(cfg.arch.mc_dropout_variant(cfg.mc_dropout), seeds.mc_init()), data, tc);
    mc.model.meta.seed = seeds.mc_init();
    save_checkpoint(run.model("mc"), mc.model);
    detail::save_history(run, "mc", mc.history);
    log << "[seed " << seed << "] train: mc-dropout final loss " << detail::final_loss(mc.history) << "\n";
  }
}

/// Scores the target pool with every configured non-random strategy.
inline void cmd_score(const ExperimentConfig& cfg, const fs::path& workspace, Level level, std::ostream& log) {
  cfg.validate();
  const bool need_committee = std::any_of(cfg.strategies.begin(), cfg.strategies.end(), uses_committee);
  for (std::uint64_t seed : cfg.seeds) {
    const RunLayout run(workspace, seed);
    const auto pool = detail::load_split(cfg, run, "target_pool");
    const ModelCheckpoint ctn = detail::load_model(run, "ctn", "train");
    const std::vector<ModelCheckpoint> committee =
        need_committee ? detail::load_committee(cfg, run) : std::vector<ModelCheckpoint>{};
    std::vector<PoolPredictions> preds;
    std::vector<std::string> ids;
    for (const Sample& s : pool) {
      preds.push_back({forward(ctn, s.image), committee.empty() ? std::vector<PredictionPair>{}
                                                                : committee_forward(committee, s.image)});
      ids.push_back(s.id);
    }
    for (Strategy st : cfg.strategies) {
      if (st == Strategy::kRandom) continue;
      const fs::path path = run.scores(level, st);
      fs::create_directories(path.parent_path());
      if (level == Level::kImage) {
        std::vector<ScoredEntry> entries;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          entries.push_back({ids[i], strategy_score(st, preds[i], Region::whole(preds[i].single.mean), cfg.kl_mode),
                             strategy_name(st)});
        }
        save_scored_pool(path, ScoredPool::from_scores(std::move(entries)));
      } else {
        const CropGeometry g = crop_geometry(cfg.target.height, cfg.target.width, cfg.crop_rows, cfg.crop_cols);
        std::vector<std::vector<double>> scores;
        for (const auto& p : preds) scores.push_back(crop_scores(st, p, g, cfg.kl_mode));
        detail::save_crop_scores(path, ids, scores);
      }
      log << "[seed " << seed << "] score: " << level_name(level) << " " << strategy_name(st) << " -> "
          << path.filename().string() << "\n";
    }
  }
}

/// Writes one selection file per strategy (and budget, at image level).
inline void cmd_select(const ExperimentConfig& cfg, const fs::path& workspace, Level level, std::ostream& log) {
  cfg.validate();
  for (std::uint64_t seed : cfg.seeds) {
    const RunLayout run(workspace, seed);
    const RunSeeds seeds{seed};
    detail::require_data(cfg, run);
    const std::vector<std::string> pool_ids = SampleStore(run.data("target_pool")).ids();
    for (Strategy st : cfg.strategies) {
      if (st != Strategy::kRandom && !fs::exists(run.scores(level, st))) {
        throw PrerequisiteError(run.scores(level, st).string() + " is missing; run `ucount score --level " +
                                level_name(level) + "` first");
      }
      if (level == Level::kImage) {
        const ScoredPool scored = st == Strategy::kRandom ? ScoredPool{} : load_scored_pool(run.scores(level, st));
        for (std::size_t k : cfg.budgets) {
          const auto chosen = st == Strategy::kRandom ? select_random(pool_ids, k, seeds.selection())
                                                      : select_top(scored, k);
          fs::create_directories(run.selection(level, st, k).parent_path());
          save_split(run.selection(level, st, k), chosen);
          log << "[seed " << seed << "] select: " << RunLayout::tag(level, st, k) << " (" << chosen.size()
              << " images)\n";
        }
      } else {
        std::vector<std::string> chosen;
        const std::size_t n_crops = cfg.crop_rows * cfg.crop_cols;
        if (st == Strategy::kRandom) {
          const auto picks = random_crops(pool_ids.size(), n_crops, seeds.selection());
          for (std::size_t i = 0; i < pool_ids.size(); ++i) chosen.push_back(crop_id(pool_ids[i], picks[i]));
        } else {
          const auto scores = detail::load_crop_scores(run.scores(level, st));
          for (const auto& id : pool_ids) {
            const auto it = scores.find(id);
            if (it == scores.end() || it->second.size() != n_crops) {
              throw PrerequisiteError(run.scores(level, st).string() + " does not cover " + id +
                                      "; rerun `ucount score --level crop`");
            }
            chosen.push_back(crop_id(id, best_crop(it->second)));
          }
        }
        const std::size_t budget = cfg.target_pool;
        fs::create_directories(run.selection(level, st, budget).parent_path());
        save_split(run.selection(level, st, budget), chosen);
        log << "[seed " << seed << "] select: " << RunLayout::tag(level, st, budget) << " (" << chosen.size()
            << " crops)\n";
      }
    }
  }
}

/// Finetunes the source CTN on every selection.
inline void cmd_finetune(const ExperimentConfig& cfg, const fs::path& workspace, Level level, std::ostream& log) {
  cfg.validate();
  for (std::uint64_t seed : cfg.seeds) {
    const RunLayout run(workspace, seed);
    const RunSeeds seeds{seed};
    detail::require_data(cfg, run);
    const ModelCheckpoint ctn = detail::load_model(run, "ctn", "train");
    const SampleStore pool(run.data("target_pool"));
    const TrainConfig tc = detail::run_train_config(cfg, seeds);
    for (Strategy st : cfg.strategies) {
      for (std::size_t k : detail::image_budgets(cfg, level)) {
        const fs::path split = run.selection(level, st, k);
        if (!fs::exists(split)) {
          throw PrerequisiteError(split.string() + " is missing; run `ucount select --level " + level_name(level) +
                                  "` first");
        }
        std::vector<Sample> chosen;
        if (level == Level::kImage) {
          chosen = pool.resolve(load_split(split));
        } else {
          const CropGeometry g = crop_geometry(cfg.target.height, cfg.target.width, cfg.crop_rows, cfg.crop_cols);
          for (const auto& id : load_split(split)) {
            const auto [parent, index] = parse_crop_id(id);
            chosen.push_back(crop_sample(pool.load(parent), g, index));
          }
        }
        const TrainResult r = finetune(ctn, chosen, tc);
        const std::string tag = RunLayout::tag(level, st, k);
        fs::create_directories(run.finetuned(level, st, k).parent_path());
        save_checkpoint(run.finetuned(level, st, k), r.model);
        save_history_csv(run.finetuned(level, st, k).replace_extension(".history.csv"), r.history);
        log << "[seed " << seed << "] finetune: " << tag << " on " << chosen.size() << " samples, final loss "
            << detail::final_loss(r.history) << "\n";
      }
    }
  }
}

/// Evaluates the source CTN on both test sets and every finetuned model present.
inline void cmd_eval(const ExperimentConfig& cfg, const fs::path& workspace, std::ostream& log) {
  cfg.validate();
  for (std::uint64_t seed : cfg.seeds) {
    const RunLayout run(workspace, seed);
    const ModelCheckpoint ctn = detail::load_model(run, "ctn", "train");
    const auto source_test = detail::load_split(cfg, run, "source_test");
    const auto target_test = detail::load_split(cfg, run, "target_test");
    fs::create_directories(run.report("x").parent_path());
    auto emit = [&](const std::string& name, const EvalReport& r) {
      save_report_csv(run.report(name), r);
      log << "[seed " << seed << "] eval: " << name << " " << r.summary() << "\n";
    };
    emit("source_ctn", evaluate(ctn, source_test));
    emit("target_before", evaluate(ctn, target_test));
    std::size_t skipped = 0;
    for (Level level : {Level::kImage, Level::kCrop}) {
      for (Strategy st : cfg.strategies) {
        for (std::size_t k : detail::image_budgets(cfg, level)) {
          const fs::path path = run.finetuned(level, st, k);
          if (!fs::exists(path)) {
            ++skipped;
            continue;
          }
          emit(RunLayout::tag(level, st, k), evaluate(load_checkpoint(path), target_test));
        }
      }
    }
    if (skipped > 0) {
      log << "[seed " << seed << "] eval: " << skipped << " finetuned models not present (run `ucount finetune`)\n";
    }
  }
}

/// Sparsification of aleatoric (CTN) and epistemic (MC dropout) uncertainty on the source test set.
inline void cmd_sparsify(const ExperimentConfig& cfg, const fs::path& workspace, std::ostream& log) {
  cfg.validate();
  for (std::uint64_t seed : cfg.seeds) {
    const RunLayout run(workspace, seed);
    const RunSeeds seeds{seed};
    const auto test = detail::load_split(cfg, run, "source_test");
    const ModelCheckpoint ctn = detail::load_model(run, "ctn", "train");
    const ModelCheckpoint mc = detail::load_model(run, "mc", "train");
    std::vector<DenseGrid> aleatoric, ctn_error, epistemic, mc_error, random_key;
    std::vector<double> flat_var, flat_err;
    std::mt19937_64 rng(seeds.mc_forward());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (const Sample& s : test) {
      const PredictionPair p = forward(ctn, s.image);
      aleatoric.push_back(aleatoric_map(p));
      ctn_error.push_back(error_map(p, s.gt_density));
      flat_var.insert(flat_var.end(), p.variance.data().begin(), p.variance.data().end());
      flat_err.insert(flat_err.end(), ctn_error.back().data().begin(), ctn_error.back().data().end());
      const McPrediction m = mc_forward(mc, s.image, cfg.mc_passes, rng());
      epistemic.push_back(m.epistemic_variance);
      mc_error.push_back(error_map(PredictionPair{m.mean, m.epistemic_variance}, s.gt_density));
      DenseGrid key(s.image.height(), s.image.width());
      for (double& v : key.data()) v = unit(rng);
      random_key.push_back(std::move(key));
    }
    auto curve = [&](const std::vector<DenseGrid>& u, const std::vector<DenseGrid>& e) {
      return cfg.sparsify_per_image ? sparsification_per_image(u, e, cfg.sparsify_steps)
                                    : sparsification_pooled(u, e, cfg.sparsify_steps);
    };
    const SparsificationCurve ca = curve(aleatoric, ctn_error), ce = curve(epistemic, mc_error),
                              cr = curve(random_key, ctn_error);
    fs::create_directories(run.sparsification("x").parent_path());
    save_curve_csv(run.sparsification("aleatoric.csv"), ca);
    save_curve_csv(run.sparsification("epistemic.csv"), ce);
    save_curve_csv(run.sparsification("random.csv"), cr);
    detail::write_text(run.sparsification("curves.svg"), curves_svg({{"aleatoric", ca}, {"epistemic", ce}}));
    const double r = pearson(flat_var, flat_err);
    std::string summary = "metric,value\n";
    summary += "pearson," + format_double(r) + "\n";
    summary += "area_aleatoric," + format_double(area_between(ca)) + "\n";
    summary += "area_epistemic," + format_double(area_between(ce)) + "\n";
    summary += "area_random," + format_double(area_between(cr)) + "\n";
    detail::write_text(run.sparsification("summary.csv"), summary);
    log << "[seed " << seed << "] sparsify: pearson " << r << ", area aleatoric " << area_between(ca)
        << ", epistemic " << area_between(ce) << ", random " << area_between(cr) << "\n";
  }
}

/// Reads a "metric,value" file into a map.
inline std::map<std::string, double> load_metric_csv(const fs::path& path) {
  std::istringstream in(detail::read_text(path));
  std::string line;
  if (!std::getline(in, line) || line != "metric,value") {
    throw FormatError(FormatError::Kind::kMalformedHeader, path.string() + ": bad metric header");
  }
  std::map<std::string, double> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(FormatError::Kind::kMalformedHeader, path.string() + ": bad row");
    out[line.substr(0, comma)] = parse_double(line.substr(comma + 1), path.string());
  }
  return out;
}

/// Mean and sample standard deviation (0 for a single value).
struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

inline MeanSd mean_sd(const std::vector<double>& xs) {
  MeanSd m;
  m.n = xs.size();
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

/// One aggregated row of the summary: a (level, strategy, budget) cell across seeds.
struct SummaryRow {
  std::string level;
  std::string strategy;
  std::size_t budget = 0;
  MeanSd mae;
  MeanSd rmse;
  std::size_t expected = 0;
  bool complete() const { return mae.n == expected; }
};

/// Aggregates every run's reports under <workspace>/report/. Returns the summary rows.
inline std::vector<SummaryRow> cmd_report(const ExperimentConfig& cfg, const fs::path& workspace, std::ostream& log) {
  cfg.validate();
  struct Cell {
    std::string level, strategy;
    std::size_t budget;
    std::string report;
  };
  std::vector<Cell> cells{{"image", "none", 0, "target_before"}};
  for (Level level : {Level::kImage, Level::kCrop})
    for (Strategy st : cfg.strategies)
      for (std::size_t k : detail::image_budgets(cfg, level))
        cells.push_back({level_name(level), strategy_name(st), k, RunLayout::tag(level, st, k)});

  std::string runs = "level,strategy,budget,seed,mae,rmse\n";
  std::vector<SummaryRow> summary;
  std::size_t found = 0;
  for (const Cell& c : cells) {
    std::vector<double> mae, rmse;
    for (std::uint64_t seed : cfg.seeds) {
      const fs::path path = RunLayout(workspace, seed).report(c.report);
      runs += c.level + "," + c.strategy + "," + std::to_string(c.budget) + "," + std::to_string(seed) + ",";
      if (!fs::exists(path)) {
        runs += ",\n";
        continue;
      }
      const EvalReport r = load_report_csv(path);
      mae.push_back(r.mae);
      rmse.push_back(r.rmse);
      runs += format_double(r.mae) + "," + format_double(r.rmse) + "\n";
      ++found;
    }
    summary.push_back({c.level, c.strategy, c.budget, mean_sd(mae), mean_sd(rmse), cfg.seeds.size()});
  }
  if (found == 0) throw PrerequisiteError(workspace.string() + ": no evaluation reports; run `ucount eval` first");

  const fs::path out = workspace / "report";
  detail::write_text(out / "runs.csv", runs);

  std::string text = "level,strategy,budget,seeds,mae_mean,mae_sd,rmse_mean,rmse_sd,status\n";
  for (const SummaryRow& r : summary) {
    text += r.level + "," + r.strategy + "," + std::to_string(r.budget) + "," + std::to_string(r.mae.n) + "/" +
            std::to_string(r.expected) + ",";
    if (r.mae.n == 0) {
      text += ",,,,missing\n";
      continue;
    }
    text += format_double(r.mae.mean) + "," + format_double(r.mae.sd) + "," + format_double(r.rmse.mean) + "," +
            format_double(r.rmse.sd) + "," + (r.complete() ? "complete" : "incomplete") + "\n";
  }
  detail::write_text(out / "summary.csv", text);

  // Strategy rows, budget columns, image level only.
  std::string table = "strategy";
  for (std::size_t k : cfg.budgets) {
    table += ",k" + std::to_string(k) + "_mae_mean,k" + std::to_string(k) + "_mae_sd,k" + std::to_string(k) +
             "_rmse_mean,k" + std::to_string(k) + "_rmse_sd";
  }
  table += "\n";
  for (Strategy st : cfg.strategies) {
    table += strategy_name(st);
    for (std::size_t k : cfg.budgets) {
      const auto it = std::find_if(summary.begin(), summary.end(), [&](const SummaryRow& r) {
        return r.level == "image" && r.strategy == strategy_name(st) && r.budget == k;
      });
      if (it->mae.n == 0) {
        table += ",,,,";
        continue;
      }
      table += "," + format_double(it->mae.mean) + "," + format_double(it->mae.sd) + "," +
               format_double(it->rmse.mean) + "," + format_double(it->rmse.sd);
    }
    table += "\n";
  }
  detail::write_text(out / "table.csv", table);

  std::string unc = "seed,pearson,area_aleatoric,area_epistemic,area_random\n";
  std::map<std::string, std::vector<double>> cols;
  for (std::uint64_t seed : cfg.seeds) {
    const fs::path path = RunLayout(workspace, seed).sparsification("summary.csv");
    unc += std::to_string(seed);
    if (!fs::exists(path)) {
      unc += ",,,,\n";
      continue;
    }
    const auto m = load_metric_csv(path);
    for (const char* key : {"pearson", "area_aleatoric", "area_epistemic", "area_random"}) {
      unc += "," + format_double(m.at(key));
      cols[key].push_back(m.at(key));
    }
    unc += "\n";
  }
  if (!cols.empty()) {
    unc += "mean";
    for (const char* key : {"pearson", "area_aleatoric", "area_epistemic", "area_random"}) {
      unc += "," + format_double(mean_sd(cols[key]).mean);
    }
    unc += "\n";
  }
  detail::write_text(out / "uncertainty.csv", unc);

  for (const SummaryRow& r : summary) {
    char buf[160];
    if (r.mae.n == 0) {
      std::snprintf(buf, sizeof buf, "%-5s %-10s k=%-4zu missing", r.level.c_str(), r.strategy.c_str(), r.budget);
    } else {
      std::snprintf(buf, sizeof buf, "%-5s %-10s k=%-4zu MAE %8.3f ± %7.3f  RMSE %8.3f ± %7.3f  (%zu/%zu seeds)%s",
                    r.level.c_str(), r.strategy.c_str(), r.budget, r.mae.mean, r.mae.sd, r.rmse.mean, r.rmse.sd,
                    r.mae.n, r.expected, r.complete() ? "" : " INCOMPLETE");
    }
    log << buf << "\n";
  }
  return summary;
}

/// Every step in order, both selection levels.
inline void cmd_run(const ExperimentConfig& cfg, const fs::path& workspace, std::ostream& log) {
  cmd_gen(cfg, workspace, log);
  cmd_train(cfg, workspace, log);
  cmd_sparsify(cfg, workspace, log);
  for (Level level : {Level::kImage, Level::kCrop}) {
    cmd_score(cfg, workspace, level, log);
    cmd_select(cfg, workspace, level, log);
    cmd_finetune(cfg, workspace, level, log);
  }
  cmd_eval(cfg, workspace, log);
  cmd_report(cfg, workspace, log);
}

}  // namespace ucount
