#pragma once

// Informativeness scores over an unlabeled pool and budgeted selection, per image or per crop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ucount/data/crop.hpp"
#include "ucount/data/io.hpp"
#include "ucount/error.hpp"
#include "ucount/model/ctn.hpp"

namespace ucount {

enum class Strategy { kRandom, kCount, kAleatoric, kKl, kDensityDiff };

inline std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kRandom: return "random";
    case Strategy::kCount: return "count";
    case Strategy::kAleatoric: return "aleatoric";
    case Strategy::kKl: return "kl";
    case Strategy::kDensityDiff: return "diff";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& name) {
  for (Strategy s : {Strategy::kRandom, Strategy::kCount, Strategy::kAleatoric, Strategy::kKl, Strategy::kDensityDiff}) {
    if (strategy_name(s) == name) return s;
  }
  throw ConfigError("unknown strategy '" + name + "' (expected random, count, aleatoric, kl or diff)");
}

/// Committee-based strategies need several models; the others use the single source model.
inline bool uses_committee(Strategy s) { return s == Strategy::kKl || s == Strategy::kDensityDiff; }

/// How KL disagreement is averaged over pairs of members.
enum class KlMode {
  kDirected,   ///< mean over i < j of KL(i || j); for two members exactly KL(0 || 1)
  kSymmetric,  ///< mean over i < j of (KL(i || j) + KL(j || i)) / 2
};

/// KL( N(mu1, var1) || N(mu2, var2) ).
inline double gaussian_kl(double mu1, double var1, double mu2, double var2) {
  return (var1 + (mu1 - mu2) * (mu1 - mu2)) / (2.0 * var2) + 0.5 * std::log(var2 / var1) - 0.5;
}

// ---------------------------------------------------------------------------
// Scores on precomputed predictions. `region` restricts scoring to a crop of the maps.

struct Region {
  std::size_t top = 0, left = 0, rows = 0, cols = 0;

  static Region whole(const DenseGrid& g) { return {0, 0, g.height(), g.width()}; }

  template <typename F>
  double sum_over(F&& per_pixel, std::size_t width) const {
    double s = 0.0;
    for (std::size_t i = top; i < top + rows; ++i)
      for (std::size_t j = left; j < left + cols; ++j) s += per_pixel(i * width + j);
    return s;
  }

  template <typename F>
  double mean_over(F&& per_pixel, std::size_t width) const {
    return sum_over(per_pixel, width) / static_cast<double>(rows * cols);
  }
};

inline double score_aleatoric(const PredictionPair& p, Region r) {
  const auto v = p.variance.data();
  return r.mean_over([&](std::size_t k) { return v[k]; }, p.variance.width());
}
inline double score_aleatoric(const PredictionPair& p) { return score_aleatoric(p, Region::whole(p.mean)); }

inline double score_count(const PredictionPair& p, Region r) {
  const auto m = p.mean.data();
  return r.sum_over([&](std::size_t k) { return m[k]; }, p.mean.width());
}
inline double score_count(const PredictionPair& p) { return score_count(p, Region::whole(p.mean)); }

namespace detail {
inline void require_members(const std::vector<PredictionPair>& members, const char* what) {
  if (members.size() < 2) throw ArgumentError(std::string(what) + ": disagreement needs at least 2 members");
  for (const auto& m : members) require_same_shape(m.mean, members[0].mean, what);
}
}  // namespace detail

inline double score_kl(const std::vector<PredictionPair>& members, Region r, KlMode mode = KlMode::kDirected) {
  detail::require_members(members, "score_kl");
  const std::size_t w = members[0].mean.width();
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < members.size(); ++a) {
    for (std::size_t b = a + 1; b < members.size(); ++b) {
      const auto m1 = members[a].mean.data(), v1 = members[a].variance.data();
      const auto m2 = members[b].mean.data(), v2 = members[b].variance.data();
      total += r.mean_over(
          [&](std::size_t k) {
            const double fwd = gaussian_kl(m1[k], v1[k], m2[k], v2[k]);
            return mode == KlMode::kDirected ? fwd : 0.5 * (fwd + gaussian_kl(m2[k], v2[k], m1[k], v1[k]));
          },
          w);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}
inline double score_kl(const std::vector<PredictionPair>& members, KlMode mode = KlMode::kDirected) {
  return score_kl(members, Region::whole(members.at(0).mean), mode);
}

inline double score_density_diff(const std::vector<PredictionPair>& members, Region r) {
  detail::require_members(members, "score_density_diff");
  const std::size_t w = members[0].mean.width();
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < members.size(); ++a) {
    for (std::size_t b = a + 1; b < members.size(); ++b) {
      const auto m1 = members[a].mean.data(), m2 = members[b].mean.data();
      total += r.mean_over([&](std::size_t k) { return (m1[k] - m2[k]) * (m1[k] - m2[k]); }, w);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}
inline double score_density_diff(const std::vector<PredictionPair>& members) {
  return score_density_diff(members, Region::whole(members.at(0).mean));
}

// ---------------------------------------------------------------------------
// Model-level wrappers.

inline double score_aleatoric(const ModelCheckpoint& model, const DenseGrid& image) {
  return score_aleatoric(forward(model, image));
}
inline double score_count(const ModelCheckpoint& model, const DenseGrid& image) {
  return score_count(forward(model, image));
}

inline std::vector<PredictionPair> committee_forward(const std::vector<ModelCheckpoint>& committee,
                                                     const DenseGrid& image) {
  std::vector<PredictionPair> out;
  for (const auto& m : committee) out.push_back(forward(m, image));
  return out;
}
inline double score_kl(const std::vector<ModelCheckpoint>& committee, const DenseGrid& image,
                       KlMode mode = KlMode::kDirected) {
  return score_kl(committee_forward(committee, image), mode);
}
inline double score_density_diff(const std::vector<ModelCheckpoint>& committee, const DenseGrid& image) {
  return score_density_diff(committee_forward(committee, image));
}

/// Predictions of every model a strategy may need, for one image.
struct PoolPredictions {
  PredictionPair single;                   ///< source model
  std::vector<PredictionPair> committee;   ///< committee members, may be empty
};

inline double strategy_score(Strategy s, const PoolPredictions& p, Region r, KlMode mode = KlMode::kDirected) {
  switch (s) {
    case Strategy::kCount: return score_count(p.single, r);
    case Strategy::kAleatoric: return score_aleatoric(p.single, r);
    case Strategy::kKl: return score_kl(p.committee, r, mode);
    case Strategy::kDensityDiff: return score_density_diff(p.committee, r);
    case Strategy::kRandom: break;
  }
  throw ArgumentError("random selection has no score");
}

// ---------------------------------------------------------------------------
// Scored pools and selection.

struct ScoredEntry {
  std::string id;
  double score = 0.0;
  std::string strategy;
  friend bool operator==(const ScoredEntry&, const ScoredEntry&) = default;
};

/// Entries sorted by score descending, ties by id ascending.
struct ScoredPool {
  std::vector<ScoredEntry> entries;

  static ScoredPool from_scores(std::vector<ScoredEntry> entries) {
    for (const auto& e : entries) {
      if (!std::isfinite(e.score)) throw NumericalError("score of " + e.id + " is not finite");
    }
    std::sort(entries.begin(), entries.end(), [](const ScoredEntry& a, const ScoredEntry& b) {
      return a.score != b.score ? a.score > b.score : a.id < b.id;
    });
    return ScoredPool{std::move(entries)};
  }

  friend bool operator==(const ScoredPool&, const ScoredPool&) = default;
};

inline void save_scored_pool(const std::filesystem::path& path, const ScoredPool& pool) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + path.string());
  out << "id,score,strategy\n";
  for (const auto& e : pool.entries) out << e.id << "," << format_double(e.score) << "," << e.strategy << "\n";
}

inline ScoredPool load_scored_pool(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "id,score,strategy") {
    throw FormatError(FormatError::Kind::kMalformedHeader, path.string() + ": bad scored-pool header");
  }
  std::vector<ScoredEntry> entries;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    ScoredEntry e;
    std::string score;
    if (!std::getline(ss, e.id, ',') || !std::getline(ss, score, ',') || !std::getline(ss, e.strategy)) {
      throw FormatError(FormatError::Kind::kMalformedHeader, path.string() + ":" + std::to_string(lineno) + ": bad row");
    }
    e.score = std::stod(score);
    entries.push_back(std::move(e));
  }
  return ScoredPool::from_scores(std::move(entries));
}

/// First k entries of the sorted pool.
inline std::vector<std::string> select_top(const ScoredPool& pool, std::size_t k) {
  if (k > pool.entries.size()) {
    throw ArgumentError("select: budget " + std::to_string(k) + " exceeds pool size " +
                        std::to_string(pool.entries.size()));
  }
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(pool.entries[i].id);
  return out;
}

/// k ids drawn without replacement; the draw depends only on the sorted id set and the seed.
inline std::vector<std::string> select_random(std::vector<std::string> ids, std::size_t k, std::uint64_t seed) {
  if (k > ids.size()) {
    throw ArgumentError("select: budget " + std::to_string(k) + " exceeds pool size " + std::to_string(ids.size()));
  }
  std::sort(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, ids.size() - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(k);
  return ids;
}

struct CropChoice {
  std::string parent;
  std::size_t index = 0;
  double score = 0.0;
};

/// Per-crop scores of one image on its full-resolution predictions.
inline std::vector<double> crop_scores(Strategy s, const PoolPredictions& p, const CropGeometry& g,
                                       KlMode mode = KlMode::kDirected) {
  std::vector<double> out;
  for (std::size_t k = 0; k < g.count(); ++k) {
    out.push_back(strategy_score(s, p, Region{g.top(k), g.left(k), g.crop_height, g.crop_width}, mode));
  }
  return out;
}

/// Index of the highest score, the lowest index among ties.
inline std::size_t best_crop(const std::vector<double>& scores) {
  if (scores.empty()) throw ArgumentError("best_crop: no crop scores");
  return static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

/// One uniformly drawn crop index per image, in image order.
inline std::vector<std::size_t> random_crops(std::size_t images, std::size_t crops_per_image, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, crops_per_image - 1);
  std::vector<std::size_t> out(images);
  for (auto& k : out) k = pick(rng);
  return out;
}

/// Best crop per image (lowest crop index on ties); random picks a uniform crop per image.
inline std::vector<CropChoice> select_crops(const std::vector<std::string>& ids,
                                            const std::vector<PoolPredictions>& predictions, Strategy s,
                                            std::size_t rows, std::size_t cols, std::uint64_t seed,
                                            KlMode mode = KlMode::kDirected) {
  if (ids.size() != predictions.size()) throw ArgumentError("select_crops: ids and predictions differ in length");
  std::vector<CropChoice> out;
  if (s == Strategy::kRandom) {
    const auto picks = random_crops(ids.size(), rows * cols, seed);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const DenseGrid& ref = predictions[i].single.mean;
      (void)crop_geometry(ref.height(), ref.width(), rows, cols);  // rejects indivisible extents
      out.push_back({ids[i], picks[i], 0.0});
    }
    return out;
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const DenseGrid& ref = predictions[i].single.mean;
    const CropGeometry g = crop_geometry(ref.height(), ref.width(), rows, cols);
    const std::vector<double> scores = crop_scores(s, predictions[i], g, mode);
    const std::size_t best = best_crop(scores);
    out.push_back({ids[i], best, scores[best]});
  }
  return out;
}

}  // namespace ucount
