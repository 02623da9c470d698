#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ucount/error.hpp"
#include "ucount/numerics/tensor.hpp"

namespace ucount {

/// Row-major H×W scalar field: an image channel, density, variance or error map.
class DenseGrid {
 public:
  DenseGrid() = default;
  DenseGrid(std::size_t height, std::size_t width, double fill = 0.0)
      : height_(height), width_(width), data_(height * width, fill) {}
  DenseGrid(std::size_t height, std::size_t width, std::vector<double> data)
      : height_(height), width_(width), data_(std::move(data)) {
    if (data_.size() != height_ * width_) {
      throw ShapeError("grid data length " + std::to_string(data_.size()) + " does not match " +
                       std::to_string(height_) + "x" + std::to_string(width_));
    }
  }

  /// Accepts H×W or 1×H×W tensors.
  static DenseGrid from_tensor(const Tensor& t) {
    if (t.rank() == 2) return DenseGrid(t.dim(0), t.dim(1), t.values());
    if (t.rank() == 3 && t.dim(0) == 1) return DenseGrid(t.dim(1), t.dim(2), t.values());
    throw ShapeError("cannot view tensor of shape " + shape_str(t.shape()) + " as a grid");
  }

  /// 1×H×W single-channel feature map.
  Tensor to_tensor() const { return Tensor(Shape{1, height_, width_}, data_); }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& at(std::size_t i, std::size_t j) { return data_[i * width_ + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * width_ + j]; }
  double& operator[](std::size_t k) { return data_[k]; }
  double operator[](std::size_t k) const { return data_[k]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }
  double mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }

  bool same_shape(const DenseGrid& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  DenseGrid region(std::size_t top, std::size_t left, std::size_t rows, std::size_t cols) const {
    if (top + rows > height_ || left + cols > width_) throw ShapeError("grid region out of bounds");
    DenseGrid out(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out.at(i, j) = at(top + i, left + j);
    return out;
  }

  friend bool operator==(const DenseGrid&, const DenseGrid&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> data_;
};

inline void require_same_shape(const DenseGrid& a, const DenseGrid& b, const char* what) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(what) + ": grid shapes differ (" + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                     std::to_string(b.width()) + ")");
  }
}

}  // namespace ucount
