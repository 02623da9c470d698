#pragma once

// Per-pixel Gaussian negative log-likelihood and squared error, both averaged over pixels.

#include <cmath>
#include <cstddef>
#include <span>

#include "ucount/data/grid.hpp"
#include "ucount/error.hpp"
#include "ucount/model/ctn.hpp"
#include "ucount/numerics/ops.hpp"

namespace ucount {

/// mean_i [ 0.5 log var_i + (y_i - mu_i)^2 / (2 var_i) ]
inline double nll_loss(const DenseGrid& mean, const DenseGrid& variance, const DenseGrid& gt) {
  require_same_shape(mean, gt, "nll_loss");
  require_same_shape(variance, gt, "nll_loss");
  double total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double v = variance.data()[i];
    if (!(v > 0.0)) throw ArgumentError("nll_loss: variance must be positive, got " + std::to_string(v));
    const double r = gt.data()[i] - mean.data()[i];
    total += 0.5 * std::log(v) + r * r / (2.0 * v);
  }
  return total / static_cast<double>(gt.size());
}

inline double nll_loss(const PredictionPair& pred, const DenseGrid& gt) { return nll_loss(pred.mean, pred.variance, gt); }

inline double mse_loss(const DenseGrid& mean, const DenseGrid& gt) {
  require_same_shape(mean, gt, "mse_loss");
  double total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double r = gt.data()[i] - mean.data()[i];
    total += r * r;
  }
  return total / static_cast<double>(gt.size());
}

/// Differentiable NLL; `target` is a constant of the same shape as `mean` and `variance`.
inline Var nll_loss(Var mean, Var variance, const Tensor& target) {
  if (mean.shape() != target.shape() || variance.shape() != target.shape()) {
    throw ShapeError("nll_loss: shapes " + shape_str(mean.shape()) + ", " + shape_str(variance.shape()) + ", " +
                     shape_str(target.shape()) + " differ");
  }
  const auto mu = mean.value().data();
  const auto var = variance.value().data();
  const auto y = target.data();
  const double n = static_cast<double>(y.size());
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (!(var[i] > 0.0)) throw NumericalError("nll_loss: non-positive variance " + std::to_string(var[i]));
    const double r = y[i] - mu[i];
    total += 0.5 * std::log(var[i]) + r * r / (2.0 * var[i]);
  }
  const std::size_t im = mean.id(), iv = variance.id();
  return mean.tape()->record(Tensor::scalar(total / n), {mean, variance},
                             [im, iv, target, n](Tape& t, std::span<const double> g) {
                               const auto mu = t.value(im).data();
                               const auto var = t.value(iv).data();
                               const auto y = target.data();
                               const double s = g[0] / n;
                               if (t.requires_grad(im)) {
                                 auto d = t.grad_buffer(im);
                                 for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * (mu[i] - y[i]) / var[i];
                               }
                               if (t.requires_grad(iv)) {
                                 auto d = t.grad_buffer(iv);
                                 for (std::size_t i = 0; i < d.size(); ++i) {
                                   const double r = y[i] - mu[i];
                                   d[i] += s * (0.5 / var[i] - r * r / (2.0 * var[i] * var[i]));
                                 }
                               }
                             });
}

inline Var mse_loss(Var mean, const Tensor& target) {
  if (mean.shape() != target.shape()) {
    throw ShapeError("mse_loss: shapes " + shape_str(mean.shape()) + " and " + shape_str(target.shape()) + " differ");
  }
  const auto mu = mean.value().data();
  const auto y = target.data();
  const double n = static_cast<double>(y.size());
  double total = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) total += (mu[i] - y[i]) * (mu[i] - y[i]);
  const std::size_t im = mean.id();
  return mean.tape()->record(Tensor::scalar(total / n), {mean}, [im, target, n](Tape& t, std::span<const double> g) {
    const auto mu = t.value(im).data();
    const auto y = target.data();
    auto d = t.grad_buffer(im);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0] * 2.0 * (mu[i] - y[i]) / n;
  });
}

}  // namespace ucount
