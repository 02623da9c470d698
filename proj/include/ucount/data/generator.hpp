#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ucount/data/sample.hpp"
#include "ucount/error.hpp"

namespace ucount {

/// Parameters of one synthetic crowd domain.
struct DomainConfig {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t count_min = 50;
  std::size_t count_max = 100;
  double radius_min = 1.5;  ///< head blob radius range, px
  double radius_max = 3.0;
  double texture_amplitude = 0.15;
  double clutter_rate = 0.3;  ///< expected head-like distractors per person at mean difficulty
  double sigma_k = 4.0;       ///< ground-truth kernel bandwidth, px
  std::uint64_t seed = 1;

  /// Most heads the image area can hold at the smallest radius.
  std::size_t capacity() const {
    const double cell = std::max(4.0 * radius_min * radius_min, 1.0);
    return static_cast<std::size_t>(static_cast<double>(height * width) / cell);
  }

  void validate() const {
    if (height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0) {
      throw ArgumentError("domain: image extents must be positive multiples of 8");
    }
    if (count_min > count_max) throw ArgumentError("domain: count_min exceeds count_max");
    if (!(radius_min > 0.0) || radius_min > radius_max) throw ArgumentError("domain: invalid blob radius range");
    if (!(sigma_k > 0.0)) throw ArgumentError("domain: sigma_k must be positive");
    if (texture_amplitude < 0.0 || clutter_rate < 0.0) throw ArgumentError("domain: negative texture/clutter");
    if (count_max > capacity()) {
      throw ArgumentError("domain: " + std::to_string(count_max) + " heads of radius " + std::to_string(radius_min) +
                          " cannot fit in " + std::to_string(height) + "x" + std::to_string(width));
    }
  }

  /// Shifted target domain: twice the crowd, smaller heads, more clutter.
  DomainConfig shifted(std::uint64_t new_seed) const {
    DomainConfig t = *this;
    t.count_min = 2 * count_min;
    t.count_max = 2 * count_max;
    t.radius_min = radius_min * 2.0 / 3.0;
    t.radius_max = radius_max * 2.0 / 3.0;
    t.clutter_rate = clutter_rate * 1.5;
    t.seed = new_seed;
    return t;
  }
};

namespace detail {

/// Paints a Gaussian-profiled object of brightness `value` over the image: each pixel moves towards
/// `value` by opacity·profile, so overlapping objects occlude instead of adding up.
inline void paint_blob(DenseGrid& img, double cx, double cy, double sx, double sy, double value, double opacity) {
  const auto h = static_cast<std::ptrdiff_t>(img.height()), w = static_cast<std::ptrdiff_t>(img.width());
  const auto i0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(cy - 3 * sy)));
  const auto i1 = std::min<std::ptrdiff_t>(h - 1, static_cast<std::ptrdiff_t>(std::ceil(cy + 3 * sy)));
  const auto j0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(std::floor(cx - 3 * sx)));
  const auto j1 = std::min<std::ptrdiff_t>(w - 1, static_cast<std::ptrdiff_t>(std::ceil(cx + 3 * sx)));
  for (std::ptrdiff_t i = i0; i <= i1; ++i) {
    for (std::ptrdiff_t j = j0; j <= j1; ++j) {
      const double dy = (static_cast<double>(i) + 0.5 - cy) / sy, dx = (static_cast<double>(j) + 0.5 - cx) / sx;
      const double a = opacity * std::exp(-0.5 * (dx * dx + dy * dy));
      double& v = img.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      v += a * (value - v);
    }
  }
}

inline std::string padded_id(const std::string& prefix, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04zu", index);
  return prefix + buf;
}

}  // namespace detail

/// Generates sample `index` of the domain; independent of how many samples are requested.
inline Sample generate_sample(const DomainConfig& cfg, std::size_t index, const std::string& id_prefix = "s") {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double h = static_cast<double>(cfg.height), w = static_cast<double>(cfg.width);

  const std::size_t count = std::uniform_int_distribution<std::size_t>(cfg.count_min, cfg.count_max)(rng);
  const double difficulty = unit(rng);  // per-image clutter and noise level

  // Head positions: a few Gaussian clusters plus a uniform component.
  const std::size_t n_clusters = 1 + static_cast<std::size_t>(rng() % 3);
  std::vector<Point> centres;
  std::vector<double> spreads;
  for (std::size_t k = 0; k < n_clusters; ++k) {
    centres.push_back({unit(rng) * w, unit(rng) * h});
    spreads.push_back((0.08 + 0.17 * unit(rng)) * std::min(h, w));
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Point> points;
  points.reserve(count);
  while (points.size() < count) {
    Point p{unit(rng) * w, unit(rng) * h};
    if (unit(rng) < 0.75) {
      const std::size_t k = static_cast<std::size_t>(rng() % n_clusters);
      p = {centres[k].x + spreads[k] * normal(rng), centres[k].y + spreads[k] * normal(rng)};
    }
    if (p.x >= 0.0 && p.x < w && p.y >= 0.0 && p.y < h) points.push_back(p);
  }

  // Background: smooth random texture plus sensor noise.
  DenseGrid image(cfg.height, cfg.width, 0.2);
  for (int k = 0; k < 3; ++k) {
    const double fx = (0.5 + 2.5 * unit(rng)) * 2.0 * std::numbers::pi / w;
    const double fy = (0.5 + 2.5 * unit(rng)) * 2.0 * std::numbers::pi / h;
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    const double amp = cfg.texture_amplitude * (0.5 + unit(rng)) / 3.0;
    for (std::size_t i = 0; i < cfg.height; ++i)
      for (std::size_t j = 0; j < cfg.width; ++j) image.at(i, j) += amp * std::sin(fx * j + fy * i + phase);
  }

  // People, back to front (larger y is nearer): torso then head, each occluding what lies behind.
  std::vector<std::size_t> depth(points.size());
  std::iota(depth.begin(), depth.end(), std::size_t{0});
  std::stable_sort(depth.begin(), depth.end(), [&](std::size_t a, std::size_t b) { return points[a].y < points[b].y; });
  for (std::size_t idx : depth) {
    const Point& p = points[idx];
    std::size_t neighbours = 0;
    for (const Point& q : points) {
      const double dx = p.x - q.x, dy = p.y - q.y;
      if (dx * dx + dy * dy < 25.0) ++neighbours;
    }
    const double crowd = std::min(1.0, static_cast<double>(neighbours - 1) / 6.0);
    const double r = cfg.radius_max - (cfg.radius_max - cfg.radius_min) * crowd * (0.6 + 0.4 * unit(rng));
    const double brightness = 0.6 + 0.35 * unit(rng);
    detail::paint_blob(image, p.x, p.y + 2.2 * r, 1.2 * r, 2.0 * r, 0.3 + 0.2 * unit(rng), 0.6);
    detail::paint_blob(image, p.x, p.y, r, r, brightness, 0.9);
  }

  // Head-like distractors, concentrated near the crowd.
  std::poisson_distribution<int> n_clutter(cfg.clutter_rate * static_cast<double>(count) * 2.0 * difficulty);
  const int clutter = n_clutter(rng);
  for (int k = 0; k < clutter; ++k) {
    double cx = unit(rng) * w, cy = unit(rng) * h;
    if (!points.empty() && unit(rng) < 0.6) {
      const Point& anchor = points[static_cast<std::size_t>(rng() % points.size())];
      cx = anchor.x + 4.0 * normal(rng);
      cy = anchor.y + 4.0 * normal(rng);
    }
    const double r = cfg.radius_min + (cfg.radius_max - cfg.radius_min) * unit(rng);
    detail::paint_blob(image, cx, cy, r * (0.7 + 0.6 * unit(rng)), r * (0.7 + 0.6 * unit(rng)), 0.45 + 0.45 * unit(rng), 0.9);
  }

  const double noise_sd = 0.02 + 0.05 * difficulty;
  for (double& v : image.data()) v = std::clamp(v + noise_sd * normal(rng), 0.0, 1.0);

  DotSet dots(cfg.height, cfg.width, std::move(points));
  DenseGrid density = render_density(dots, cfg.height, cfg.width, cfg.sigma_k);
  return Sample{detail::padded_id(id_prefix, index), std::move(image), std::move(dots), std::move(density)};
}

/// `n` samples of the domain, deterministic in (cfg, n).
inline std::vector<Sample> generate_domain(const DomainConfig& cfg, std::size_t n, const std::string& id_prefix = "s") {
  cfg.validate();
  if (n == 0) throw ArgumentError("generate_domain: n must be at least 1");
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_sample(cfg, i, id_prefix));
  return out;
}

}  // namespace ucount
