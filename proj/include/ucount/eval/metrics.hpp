#pragma once

// Count-level accuracy: predicted count is the sum of the predicted density map.

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ucount/data/io.hpp"
#include "ucount/data/sample.hpp"
#include "ucount/error.hpp"
#include "ucount/model/ctn.hpp"

namespace ucount {

/// Per-pixel squared error (mu - y)^2.
inline DenseGrid error_map(const PredictionPair& pred, const DenseGrid& gt) {
  require_same_shape(pred.mean, gt, "error_map");
  DenseGrid out(gt.height(), gt.width());
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double r = pred.mean.data()[i] - gt.data()[i];
    out.data()[i] = r * r;
  }
  return out;
}

struct EvalRow {
  std::string id;
  double true_count = 0.0;
  double predicted_count = 0.0;
  double abs_error = 0.0;
  friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mae = 0.0;
  double rmse = 0.0;

  std::size_t n() const { return rows.size(); }

  std::string summary() const {
    char buf[128];
    std::snprintf(buf, sizeof buf, "n=%zu MAE=%.4f RMSE=%.4f", rows.size(), mae, rmse);
    return buf;
  }

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline EvalReport report_from_counts(const std::vector<std::string>& ids, const std::vector<double>& truth,
                                     const std::vector<double>& predicted) {
  if (ids.empty()) throw ArgumentError("evaluate: empty test set");
  if (ids.size() != truth.size() || ids.size() != predicted.size()) {
    throw ArgumentError("evaluate: ids, true and predicted counts differ in length");
  }
  EvalReport r;
  double abs_sum = 0.0, sq_sum = 0.0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const double e = truth[i] - predicted[i];
    r.rows.push_back({ids[i], truth[i], predicted[i], std::abs(e)});
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const double n = static_cast<double>(ids.size());
  r.mae = abs_sum / n;
  r.rmse = std::sqrt(sq_sum / n);
  return r;
}

inline EvalReport evaluate(const ModelCheckpoint& model, const std::vector<Sample>& test) {
  if (test.empty()) throw ArgumentError("evaluate: empty test set");
  std::vector<std::string> ids;
  std::vector<double> truth, predicted;
  for (const Sample& s : test) {
    ids.push_back(s.id);
    truth.push_back(s.count());
    predicted.push_back(forward(model, s.image).mean.sum());
  }
  return report_from_counts(ids, truth, predicted);
}

inline void save_report_csv(const std::filesystem::path& path, const EvalReport& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + path.string());
  out << "id,true_count,predicted_count,abs_error\n";
  for (const EvalRow& row : r.rows) {
    out << row.id << "," << format_double(row.true_count) << "," << format_double(row.predicted_count) << ","
        << format_double(row.abs_error) << "\n";
  }
  out << "#MAE," << format_double(r.mae) << "\n#RMSE," << format_double(r.rmse) << "\n";
}

inline EvalReport load_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "id,true_count,predicted_count,abs_error") {
    throw FormatError(FormatError::Kind::kMalformedHeader, path.string() + ": bad report header");
  }
  EvalReport r;
  bool have_mae = false, have_rmse = false;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::vector<std::string> f;
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    auto bad = [&] {
      return FormatError(FormatError::Kind::kMalformedHeader, path.string() + ":" + std::to_string(lineno) + ": bad row");
    };
    if (f.size() == 2 && f[0] == "#MAE") {
      r.mae = std::stod(f[1]);
      have_mae = true;
    } else if (f.size() == 2 && f[0] == "#RMSE") {
      r.rmse = std::stod(f[1]);
      have_rmse = true;
    } else if (f.size() == 4) {
      r.rows.push_back({f[0], std::stod(f[1]), std::stod(f[2]), std::stod(f[3])});
    } else {
      throw bad();
    }
  }
  if (!have_mae || !have_rmse) throw FormatError(FormatError::Kind::kTruncated, path.string() + ": missing aggregates");
  return r;
}

}  // namespace ucount
