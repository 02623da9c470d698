#pragma once

// Sparsification: remove pixels in decreasing order of uncertainty and track the mean error of
// what remains; the oracle removes by true error instead.

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

#include "ucount/data/grid.hpp"
#include "ucount/data/io.hpp"
#include "ucount/error.hpp"
#include "ucount/model/ctn.hpp"

namespace ucount {

inline DenseGrid aleatoric_map(const PredictionPair& pred) { return pred.variance; }

struct SparsificationCurve {
  std::vector<double> fractions;
  std::vector<double> error;   ///< ranking under test
  std::vector<double> oracle;  ///< ranking by true error

  friend bool operator==(const SparsificationCurve&, const SparsificationCurve&) = default;
};

namespace detail {

/// Indices sorted by key descending, equal keys by index ascending.
inline std::vector<std::size_t> removal_order(std::span<const double> key) {
  std::vector<std::size_t> idx(key.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  return idx;
}

/// Mean error of the pixels left after removing floor(k·N/steps) of them in `order`, k = 0..steps-1.
inline std::vector<double> remaining_error(std::span<const double> error, const std::vector<std::size_t>& order,
                                           std::size_t steps) {
  const std::size_t n = error.size();
  // suffix[r] = sum of errors of pixels order[r..n)
  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t r = n; r-- > 0;) suffix[r] = suffix[r + 1] + error[order[r]];
  std::vector<double> out;
  for (std::size_t k = 0; k < steps; ++k) {
    const std::size_t removed = k * n / steps;
    out.push_back(suffix[removed] / static_cast<double>(n - removed));
  }
  return out;
}

inline void require_curve_inputs(std::span<const double> u, std::span<const double> e, std::size_t steps) {
  if (u.size() != e.size()) {
    throw ShapeError("sparsification: " + std::to_string(u.size()) + " uncertainty values vs " +
                     std::to_string(e.size()) + " error values");
  }
  if (u.empty()) throw ArgumentError("sparsification: no pixels");
  if (steps < 2) throw ArgumentError("sparsification: steps must be at least 2");
}

}  // namespace detail

/// Curve over fractions k/steps, k = 0..steps-1, on flat arrays of per-pixel values.
inline SparsificationCurve sparsification(std::span<const double> uncertainty, std::span<const double> error,
                                          std::size_t steps = 20) {
  detail::require_curve_inputs(uncertainty, error, steps);
  SparsificationCurve c;
  for (std::size_t k = 0; k < steps; ++k) c.fractions.push_back(static_cast<double>(k) / static_cast<double>(steps));
  c.error = detail::remaining_error(error, detail::removal_order(uncertainty), steps);
  c.oracle = detail::remaining_error(error, detail::removal_order(error), steps);
  return c;
}

inline SparsificationCurve sparsification(const DenseGrid& uncertainty, const DenseGrid& error,
                                          std::size_t steps = 20) {
  require_same_shape(uncertainty, error, "sparsification");
  return sparsification(uncertainty.data(), error.data(), steps);
}

/// All pixels of all images pooled into one ranking.
inline SparsificationCurve sparsification_pooled(const std::vector<DenseGrid>& uncertainty,
                                                 const std::vector<DenseGrid>& error, std::size_t steps = 20) {
  if (uncertainty.size() != error.size()) throw ShapeError("sparsification: image counts differ");
  std::vector<double> u, e;
  for (std::size_t i = 0; i < error.size(); ++i) {
    require_same_shape(uncertainty[i], error[i], "sparsification");
    u.insert(u.end(), uncertainty[i].data().begin(), uncertainty[i].data().end());
    e.insert(e.end(), error[i].data().begin(), error[i].data().end());
  }
  return sparsification(u, e, steps);
}

/// One curve per image, averaged pointwise.
inline SparsificationCurve sparsification_per_image(const std::vector<DenseGrid>& uncertainty,
                                                    const std::vector<DenseGrid>& error, std::size_t steps = 20) {
  if (uncertainty.size() != error.size()) throw ShapeError("sparsification: image counts differ");
  if (error.empty()) throw ArgumentError("sparsification: no images");
  SparsificationCurve avg;
  for (std::size_t i = 0; i < error.size(); ++i) {
    const SparsificationCurve c = sparsification(uncertainty[i], error[i], steps);
    if (i == 0) {
      avg = c;
      continue;
    }
    for (std::size_t k = 0; k < steps; ++k) {
      avg.error[k] += c.error[k];
      avg.oracle[k] += c.oracle[k];
    }
  }
  for (std::size_t k = 0; k < steps; ++k) {
    avg.error[k] /= static_cast<double>(error.size());
    avg.oracle[k] /= static_cast<double>(error.size());
  }
  return avg;
}

/// Trapezoidal area between the ranking and oracle curves after dividing both by the f = 0 error.
/// The curve is closed at f = 1 where both are empty (gap 0). A zero starting error gives area 0.
inline double area_between(const SparsificationCurve& c) {
  const std::size_t n = c.fractions.size();
  if (n == 0 || c.error.size() != n || c.oracle.size() != n) throw ArgumentError("area_between: malformed curve");
  const double base = c.error[0];
  if (!(base > 0.0)) return 0.0;
  std::vector<double> f = c.fractions, gap(n);
  for (std::size_t k = 0; k < n; ++k) gap[k] = (c.error[k] - c.oracle[k]) / base;
  if (f.back() < 1.0) {
    f.push_back(1.0);
    gap.push_back(0.0);
  }
  double area = 0.0;
  for (std::size_t k = 1; k < f.size(); ++k) area += 0.5 * (gap[k] + gap[k - 1]) * (f[k] - f[k - 1]);
  return area;
}

/// Area of a uniformly random ranking of the same pixels, for reference.
inline double random_ranking_area(std::span<const double> error, std::size_t steps, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> key(error.size());
  for (double& v : key) v = u(rng);
  return area_between(sparsification(key, error, steps));
}

/// Sample Pearson correlation; 0 when either series is constant.
inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw ArgumentError("pearson: need two equal-length series of length ≥ 2");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

inline void save_curve_csv(const std::filesystem::path& path, const SparsificationCurve& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write " + path.string());
  out << "fraction,ranking_error,oracle_error\n";
  for (std::size_t k = 0; k < c.fractions.size(); ++k) {
    out << format_double(c.fractions[k]) << "," << format_double(c.error[k]) << "," << format_double(c.oracle[k])
        << "\n";
  }
}

inline SparsificationCurve load_curve_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "fraction,ranking_error,oracle_error") {
    throw FormatError(FormatError::Kind::kMalformedHeader, path.string() + ": bad curve header");
  }
  SparsificationCurve c;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, d;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, d)) {
      throw FormatError(FormatError::Kind::kMalformedHeader, path.string() + ":" + std::to_string(lineno) + ": bad row");
    }
    c.fractions.push_back(std::stod(a));
    c.error.push_back(std::stod(b));
    c.oracle.push_back(std::stod(d));
  }
  return c;
}

/// Line plot of one or more curves (normalized by their f = 0 error) plus the first curve's oracle.
inline std::string curves_svg(const std::vector<std::pair<std::string, SparsificationCurve>>& curves) {
  const double w = 480, h = 320, m = 40;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<line x1=\"" << m << "\" y1=\"" << h - m << "\" x2=\"" << w - m << "\" y2=\"" << h - m
     << "\" stroke=\"black\"/>\n"
     << "<line x1=\"" << m << "\" y1=\"" << m << "\" x2=\"" << m << "\" y2=\"" << h - m << "\" stroke=\"black\"/>\n"
     << "<text x=\"" << w / 2 << "\" y=\"" << h - 8 << "\" font-size=\"12\">fraction removed</text>\n";
  double ymax = 1.0;
  for (const auto& [name, c] : curves) {
    const double base = c.error.empty() || c.error[0] <= 0 ? 1.0 : c.error[0];
    for (double v : c.error) ymax = std::max(ymax, v / base);
  }
  auto polyline = [&](const std::vector<double>& f, const std::vector<double>& y, double base, const char* colour) {
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" points=\"";
    for (std::size_t k = 0; k < f.size(); ++k) {
      os << m + f[k] * (w - 2 * m) << "," << (h - m) - (y[k] / base) / ymax * (h - 2 * m) << " ";
    }
    os << "\"/>\n";
  };
  const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::size_t i = 0;
  for (const auto& [name, c] : curves) {
    const double base = c.error.empty() || c.error[0] <= 0 ? 1.0 : c.error[0];
    const char* colour = colours[i % 5];
    polyline(c.fractions, c.error, base, colour);
    if (i == 0) polyline(c.fractions, c.oracle, base, "black");
    os << "<text x=\"" << w - m - 120 << "\" y=\"" << m + 14 * (i + 1) << "\" font-size=\"12\" fill=\"" << colour
       << "\">" << name << "</text>\n";
    ++i;
  }
  os << "<text x=\"" << w - m - 120 << "\" y=\"" << m + 14 * (i + 1) << "\" font-size=\"12\">oracle</text>\n</svg>\n";
  return os.str();
}

}  // namespace ucount
