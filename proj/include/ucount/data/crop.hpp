#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "ucount/data/sample.hpp"

namespace ucount {

struct CropGeometry {
  std::size_t rows = 4;
  std::size_t cols = 4;
  std::size_t crop_height = 0;
  std::size_t crop_width = 0;

  std::size_t count() const { return rows * cols; }
  std::size_t top(std::size_t index) const { return (index / cols) * crop_height; }
  std::size_t left(std::size_t index) const { return (index % cols) * crop_width; }
};

inline CropGeometry crop_geometry(std::size_t height, std::size_t width, std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0 || height % rows != 0 || width % cols != 0) {
    throw ShapeError("crop grid " + std::to_string(rows) + "x" + std::to_string(cols) + " does not divide " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  return CropGeometry{rows, cols, height / rows, width / cols};
}

inline std::string crop_id(const std::string& parent, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_c%02zu", index);
  return parent + buf;
}

/// Inverse of crop_id.
inline std::pair<std::string, std::size_t> parse_crop_id(const std::string& id) {
  const auto at = id.rfind("_c");
  if (at == std::string::npos || at + 2 >= id.size()) throw ArgumentError("'" + id + "' is not a crop id");
  std::size_t index = 0;
  for (std::size_t i = at + 2; i < id.size(); ++i) {
    if (id[i] < '0' || id[i] > '9') throw ArgumentError("'" + id + "' is not a crop id");
    index = index * 10 + static_cast<std::size_t>(id[i] - '0');
  }
  return {id.substr(0, at), index};
}

/// Restriction of a sample to crop `index` of a rows×cols tiling (row-major crop order).
inline Sample crop_sample(const Sample& sample, const CropGeometry& g, std::size_t index) {
  const std::size_t top = g.top(index), left = g.left(index);
  std::vector<Point> pts;
  for (const Point& p : sample.dots.points()) {
    const auto i = static_cast<std::size_t>(std::floor(p.y));
    const auto j = static_cast<std::size_t>(std::floor(p.x));
    if (i >= top && i < top + g.crop_height && j >= left && j < left + g.crop_width) {
      pts.push_back({p.x - static_cast<double>(left), p.y - static_cast<double>(top)});
    }
  }
  return Sample{crop_id(sample.id, index), sample.image.region(top, left, g.crop_height, g.crop_width),
                DotSet(g.crop_height, g.crop_width, std::move(pts)),
                sample.gt_density.region(top, left, g.crop_height, g.crop_width)};
}

/// Non-overlapping rows×cols tiling. Crop density maps are restrictions of the parent map,
/// so their counts add up to the parent's; a dot belongs to the crop holding its pixel.
inline std::vector<Sample> crop_grid(const Sample& sample, std::size_t rows = 4, std::size_t cols = 4) {
  const CropGeometry g = crop_geometry(sample.image.height(), sample.image.width(), rows, cols);
  std::vector<Sample> out;
  out.reserve(g.count());
  for (std::size_t k = 0; k < g.count(); ++k) out.push_back(crop_sample(sample, g, k));
  return out;
}

/// Restriction of an arbitrary map to one crop of the tiling.
inline DenseGrid crop_region(const DenseGrid& grid, const CropGeometry& g, std::size_t index) {
  return grid.region(g.top(index), g.left(index), g.crop_height, g.crop_width);
}

/// Inverse of crop_grid for a single field.
inline DenseGrid assemble_crops(const std::vector<DenseGrid>& crops, std::size_t rows, std::size_t cols) {
  if (crops.size() != rows * cols || crops.empty()) throw ShapeError("assemble_crops: wrong number of crops");
  const std::size_t ch = crops[0].height(), cw = crops[0].width();
  DenseGrid out(rows * ch, cols * cw);
  for (std::size_t k = 0; k < crops.size(); ++k) {
    if (crops[k].height() != ch || crops[k].width() != cw) throw ShapeError("assemble_crops: ragged crops");
    const std::size_t top = (k / cols) * ch, left = (k % cols) * cw;
    for (std::size_t i = 0; i < ch; ++i)
      for (std::size_t j = 0; j < cw; ++j) out.at(top + i, left + j) = crops[k].at(i, j);
  }
  return out;
}

}  // namespace ucount
