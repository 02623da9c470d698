#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ucount/data/grid.hpp"
#include "ucount/error.hpp"

namespace ucount {

/// Head location in pixel coordinates; pixel (i, j) covers [j, j+1) × [i, i+1).
struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Dot annotations of one image. Every point lies in [0, W) × [0, H).
class DotSet {
 public:
  DotSet() = default;
  DotSet(std::size_t height, std::size_t width, std::vector<Point> points)
      : height_(height), width_(width), points_(std::move(points)) {
    for (const Point& p : points_) {
      if (!(p.x >= 0.0 && p.x < static_cast<double>(width_) && p.y >= 0.0 && p.y < static_cast<double>(height_))) {
        throw ArgumentError("dot (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside " +
                            std::to_string(height_) + "x" + std::to_string(width_) + " image");
      }
    }
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t count() const noexcept { return points_.size(); }
  const std::vector<Point>& points() const noexcept { return points_; }

  friend bool operator==(const DotSet&, const DotSet&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<Point> points_;
};

/// An annotated image: the unit of selection and training.
struct Sample {
  std::string id;
  DenseGrid image;
  DotSet dots;
  DenseGrid gt_density;

  /// Ground-truth count as the mass of the density map (equals |dots| for whole images).
  double count() const { return gt_density.sum(); }

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Sum of per-dot Gaussians evaluated at pixel centres, each truncated at 4·sigma
/// and renormalized over its in-bounds support so that it carries unit mass.
inline DenseGrid render_density(const DotSet& dots, std::size_t height, std::size_t width, double sigma) {
  if (!(sigma > 0.0)) throw ArgumentError("render_density: sigma must be positive");
  if (dots.height() != height || dots.width() != width) {
    throw ShapeError("render_density: dot set extents differ from the requested grid");
  }
  DenseGrid out(height, width);
  const double cutoff = 4.0 * sigma;
  const auto reach = static_cast<std::ptrdiff_t>(std::ceil(cutoff)) + 1;
  std::vector<double> weights;
  for (const Point& p : dots.points()) {
    const auto pi = static_cast<std::ptrdiff_t>(std::floor(p.y));
    const auto pj = static_cast<std::ptrdiff_t>(std::floor(p.x));
    const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, pi - reach);
    const std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(height) - 1, pi + reach);
    const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, pj - reach);
    const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(width) - 1, pj + reach);
    const std::size_t cols = static_cast<std::size_t>(j1 - j0 + 1);
    weights.assign(static_cast<std::size_t>(i1 - i0 + 1) * cols, -1.0);

    auto dist2 = [&](std::ptrdiff_t i, std::ptrdiff_t j) {
      const double dy = static_cast<double>(i) + 0.5 - p.y, dx = static_cast<double>(j) + 0.5 - p.x;
      return dx * dx + dy * dy;
    };
    // Shift exponents by the nearest in-support distance so tiny sigmas cannot underflow to zero mass.
    const double d0 = dist2(pi, pj);
    double total = 0.0;
    for (std::ptrdiff_t i = i0; i <= i1; ++i) {
      for (std::ptrdiff_t j = j0; j <= j1; ++j) {
        const double d2 = dist2(i, j);
        if (d2 > cutoff * cutoff && !(i == pi && j == pj)) continue;
        const double w = std::exp(-(d2 - d0) / (2.0 * sigma * sigma));
        weights[static_cast<std::size_t>(i - i0) * cols + static_cast<std::size_t>(j - j0)] = w;
        total += w;
      }
    }
    for (std::ptrdiff_t i = i0; i <= i1; ++i) {
      for (std::ptrdiff_t j = j0; j <= j1; ++j) {
        const double w = weights[static_cast<std::size_t>(i - i0) * cols + static_cast<std::size_t>(j - j0)];
        if (w >= 0.0) out.at(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) += w / total;
      }
    }
  }
  return out;
}

}  // namespace ucount
