#pragma once

// Differentiable tensor operations recorded on a Tape.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ucount/numerics/tape.hpp"
#include "ucount/numerics/tensor.hpp"

namespace ucount {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline MatMap as_mat(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MatMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline ConstMatMap as_mat(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMatMap(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.value().rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     shape_str(v.shape()));
  }
}

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename F>
Tensor map_values(const Tensor& x, F&& f) {
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

/// Column-lowering of a zero-padded C×H×W input for a k×k kernel: (C·k·k) × (H·W).
inline AlignedBuffer im2col(std::span<const double> x, std::size_t channels, std::size_t height,
                                  std::size_t width, std::size_t k) {
  const std::size_t pad = k / 2;
  const std::size_t hw = height * width;
  AlignedBuffer cols(channels * k * k * hw, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* plane = x.data() + c * hw;
    for (std::size_t dy = 0; dy < k; ++dy) {
      for (std::size_t dx = 0; dx < k; ++dx) {
        double* row = cols.data() + ((c * k + dy) * k + dx) * hw;
        for (std::size_t i = 0; i < height; ++i) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + dy) - static_cast<std::ptrdiff_t>(pad);
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(height)) continue;
          const double* src = plane + static_cast<std::size_t>(si) * width;
          double* dst = row + i * width;
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(dx) - static_cast<std::ptrdiff_t>(pad);
          const std::size_t j0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
          const std::size_t j1 = shift > 0 ? width - static_cast<std::size_t>(shift) : width;
          for (std::size_t j = j0; j < j1; ++j) dst[j] = src[static_cast<std::ptrdiff_t>(j) + shift];
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatters column gradients back onto the input gradient.
inline void col2im_add(std::span<const double> cols, std::span<double> dx, std::size_t channels,
                       std::size_t height, std::size_t width, std::size_t k) {
  const std::size_t pad = k / 2;
  const std::size_t hw = height * width;
  for (std::size_t c = 0; c < channels; ++c) {
    double* plane = dx.data() + c * hw;
    for (std::size_t dy = 0; dy < k; ++dy) {
      for (std::size_t dxk = 0; dxk < k; ++dxk) {
        const double* row = cols.data() + ((c * k + dy) * k + dxk) * hw;
        for (std::size_t i = 0; i < height; ++i) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + dy) - static_cast<std::ptrdiff_t>(pad);
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(height)) continue;
          double* dst = plane + static_cast<std::size_t>(si) * width;
          const double* src = row + i * width;
          const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(dxk) - static_cast<std::ptrdiff_t>(pad);
          const std::size_t j0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
          const std::size_t j1 = shift > 0 ? width - static_cast<std::size_t>(shift) : width;
          for (std::size_t j = j0; j < j1; ++j) dst[static_cast<std::ptrdiff_t>(j) + shift] += src[j];
        }
      }
    }
  }
}

/// Source taps for half-pixel-aligned 2× bilinear resampling along one axis.
struct LinearTap {
  std::size_t lo;
  std::size_t hi;
  double w_hi;
};

inline std::vector<LinearTap> upsample_taps(std::size_t n) {
  std::vector<LinearTap> taps(2 * n);
  const double last = static_cast<double>(n - 1);
  for (std::size_t o = 0; o < 2 * n; ++o) {
    const double src = std::clamp((static_cast<double>(o) + 0.5) / 2.0 - 0.5, 0.0, last);
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, n - 1);
    taps[o] = LinearTap{lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::span<const double> g) {
    for (std::size_t id : {ia, ib}) {
      if (!t.requires_grad(id)) continue;
      auto d = t.grad_buffer(id);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::span<const double> g) {
    if (t.requires_grad(ia)) {
      auto d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::span<const double> g) {
    auto av = t.value(ia).data();
    auto bv = t.value(ib).data();
    if (t.requires_grad(ia)) {
      auto d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double factor) {
  Tensor out = detail::map_values(a.value(), [factor](double v) { return v * factor; });
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, factor](Tape& t, std::span<const double> g) {
    auto d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * factor;
  });
}

inline Var add_scalar(Var a, double offset) {
  Tensor out = detail::map_values(a.value(), [offset](double v) { return v + offset; });
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::span<const double> g) {
    auto d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  });
}

/// Elementwise product with a constant tensor (dropout masks).
inline Var mul_const(Var a, const Tensor& mask) {
  if (mask.shape() != a.shape()) {
    throw ShapeError("mul_const: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(mask.shape()));
  }
  Tensor out = a.value();
  auto o = out.data();
  auto m = mask.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= m[i];
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, mask](Tape& t, std::span<const double> g) {
    auto d = t.grad_buffer(ia);
    auto m = mask.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * m[i];
  });
}

inline Var square(Var a) {
  Tensor out = detail::map_values(a.value(), [](double v) { return v * v; });
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::span<const double> g) {
    auto x = t.value(ia).data();
    auto d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * x[i] * g[i];
  });
}

inline Var log(Var a) {
  const Tensor& x = a.value();
  for (double v : x.data()) {
    if (!(v > 0.0)) throw NumericalError("log: non-positive input " + std::to_string(v));
  }
  Tensor out = detail::map_values(x, [](double v) { return std::log(v); });
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::span<const double> g) {
    auto x = t.value(ia).data();
    auto d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] / x[i];
  });
}

/// max(0, x); the derivative at exactly 0 is 0.
inline Var relu(Var a) {
  Tensor out = detail::map_values(a.value(), [](double v) { return v > 0.0 ? v : 0.0; });
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::span<const double> g) {
    auto x = t.value(ia).data();
    auto d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (x[i] > 0.0) d[i] += g[i];
    }
  });
}

inline double softplus_value(double x, double beta) {
  const double bx = beta * x;
  return (std::max(bx, 0.0) + std::log1p(std::exp(-std::abs(bx)))) / beta;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// (1/beta) * log(1 + exp(beta * x)), evaluated without overflow.
inline Var softplus(Var a, double beta = 1.0) {
  if (!(beta > 0.0)) throw ArgumentError("softplus: beta must be positive");
  Tensor out = detail::map_values(a.value(), [beta](double v) { return softplus_value(v, beta); });
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, beta](Tape& t, std::span<const double> g) {
    auto x = t.value(ia).data();
    auto d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * sigmoid(beta * x[i]);
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(Var a) {
  const std::size_t ia = a.id();
  return a.tape()->record(Tensor::scalar(a.value().sum()), {a}, [ia](Tape& t, std::span<const double> g) {
    auto d = t.grad_buffer(ia);
    for (double& v : d) v += g[0];
  });
}

inline Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

// ---------------------------------------------------------------------------
// Linear algebra

/// Standard matrix product of n×k and k×m matrices.
inline Var matmul(Var a, Var b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  if (b.shape()[0] != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out(Shape{n, m});
  detail::as_mat(out.data(), n, m).noalias() =
      detail::as_mat(a.value().data(), n, k) * detail::as_mat(b.value().data(), k, m);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, n, k, m](Tape& t, std::span<const double> g) {
    auto gm = detail::as_mat(g, n, m);
    if (t.requires_grad(ia)) {
      detail::as_mat(t.grad_buffer(ia), n, k).noalias() += gm * detail::as_mat(t.value(ib).data(), k, m).transpose();
    }
    if (t.requires_grad(ib)) {
      detail::as_mat(t.grad_buffer(ib), k, m).noalias() += detail::as_mat(t.value(ia).data(), n, k).transpose() * gm;
    }
  });
}

inline Var transpose(Var a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  Tensor out(Shape{m, n});
  detail::as_mat(out.data(), m, n) = detail::as_mat(a.value().data(), n, m).transpose();
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, n, m](Tape& t, std::span<const double> g) {
    detail::as_mat(t.grad_buffer(ia), n, m) += detail::as_mat(g, m, n).transpose();
  });
}

/// Row-wise softmax of an n×m matrix.
inline Var softmax_rows(Var a) {
  detail::require_rank(a, 2, "softmax_rows");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  Tensor out(Shape{n, m});
  auto x = a.value().data();
  auto y = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = x.data() + i * m;
    double* yr = y.data() + i * m;
    const double mx = *std::max_element(xr, xr + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < m; ++j) yr[j] /= z;
  }
  const std::size_t ia = a.id();
  Tensor saved = out;
  return a.tape()->record(std::move(out), {a}, [ia, n, m, saved](Tape& t, std::span<const double> g) {
    auto y = saved.data();
    auto d = t.grad_buffer(ia);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < m; ++j) dot += g[i * m + j] * y[i * m + j];
      for (std::size_t j = 0; j < m; ++j) d[i * m + j] += y[i * m + j] * (g[i * m + j] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Spatial (C×H×W feature maps)

/// Zero-padded "same" cross-correlation with an odd square kernel F×C×k×k, plus bias[F].
inline Var conv2d(Var input, Var kernels, Var bias) {
  detail::require_rank(input, 3, "conv2d");
  detail::require_rank(kernels, 4, "conv2d");
  detail::require_rank(bias, 1, "conv2d");
  const Shape& is = input.shape();
  const Shape& ks = kernels.shape();
  const std::size_t c = is[0], h = is[1], w = is[2];
  const std::size_t f = ks[0], k = ks[2];
  if (ks[1] != c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(ks[1]) + " input channels, input has " +
                     std::to_string(c));
  }
  if (ks[3] != k || k % 2 == 0) throw ShapeError("conv2d: kernel must be odd and square, got " + shape_str(ks));
  if (bias.shape()[0] != f) throw ShapeError("conv2d: bias length must equal filter count");

  const std::size_t hw = h * w, ckk = c * k * k;
  AlignedBuffer cols;
  std::span<const double> col_view;
  if (k == 1) {
    col_view = input.value().data();
  } else {
    cols = detail::im2col(input.value().data(), c, h, w, k);
    col_view = cols;
  }
  Tensor out(Shape{f, h, w});
  auto om = detail::as_mat(out.data(), f, hw);
  om.noalias() = detail::as_mat(kernels.value().data(), f, ckk) * detail::as_mat(col_view, ckk, hw);
  auto bv = bias.value().data();
  for (std::size_t o = 0; o < f; ++o) om.row(static_cast<Eigen::Index>(o)).array() += bv[o];

  const std::size_t ii = input.id(), ik = kernels.id(), ib = bias.id();
  return input.tape()->record(
      std::move(out), {input, kernels, bias},
      [ii, ik, ib, c, h, w, f, k, hw, ckk, cols = std::move(cols)](Tape& t, std::span<const double> g) {
        auto gm = detail::as_mat(g, f, hw);
        std::span<const double> cv = k == 1 ? t.value(ii).data() : std::span<const double>(cols);
        if (t.requires_grad(ik)) {
          detail::as_mat(t.grad_buffer(ik), f, ckk).noalias() += gm * detail::as_mat(cv, ckk, hw).transpose();
        }
        if (t.requires_grad(ib)) {
          auto db = t.grad_buffer(ib);
          for (std::size_t o = 0; o < f; ++o) db[o] += gm.row(static_cast<Eigen::Index>(o)).sum();
        }
        if (t.requires_grad(ii)) {
          auto km = detail::as_mat(t.value(ik).data(), f, ckk);
          if (k == 1) {
            detail::as_mat(t.grad_buffer(ii), c, hw).noalias() += km.transpose() * gm;
          } else {
            AlignedBuffer dcols(ckk * hw);
            detail::as_mat(std::span<double>(dcols), ckk, hw).noalias() = km.transpose() * gm;
            detail::col2im_add(dcols, t.grad_buffer(ii), c, h, w, k);
          }
        }
      });
}

/// Max over disjoint 2×2 blocks; H and W must be even.
inline Var maxpool2x(Var input) {
  detail::require_rank(input, 3, "maxpool2x");
  const std::size_t c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  if (h % 2 != 0 || w % 2 != 0) throw ShapeError("maxpool2x: odd spatial extents " + shape_str(input.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out(Shape{c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  auto x = input.value().data();
  auto y = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (ch * h + 2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (ch * h + 2 * i + di) * w + 2 * j + dj;
            if (x[idx] > x[best]) best = idx;
          }
        }
        const std::size_t o = (ch * oh + i) * ow + j;
        y[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  const std::size_t ia = input.id();
  return input.tape()->record(std::move(out), {input},
                              [ia, argmax = std::move(argmax)](Tape& t, std::span<const double> g) {
                                auto d = t.grad_buffer(ia);
                                for (std::size_t o = 0; o < g.size(); ++o) d[argmax[o]] += g[o];
                              });
}

/// Bilinear 2× upsampling; output pixel i samples the input at (i + 0.5)/2 - 0.5, clamped to the edge.
inline Var upsample2x(Var input) {
  detail::require_rank(input, 3, "upsample2x");
  const std::size_t c = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  const std::size_t oh = 2 * h, ow = 2 * w;
  auto ty = detail::upsample_taps(h);
  auto tx = detail::upsample_taps(w);
  Tensor out(Shape{c, oh, ow});
  auto x = input.value().data();
  auto y = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* p = x.data() + ch * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      const auto& a = ty[i];
      for (std::size_t j = 0; j < ow; ++j) {
        const auto& b = tx[j];
        const double top = p[a.lo * w + b.lo] * (1.0 - b.w_hi) + p[a.lo * w + b.hi] * b.w_hi;
        const double bot = p[a.hi * w + b.lo] * (1.0 - b.w_hi) + p[a.hi * w + b.hi] * b.w_hi;
        y[(ch * oh + i) * ow + j] = top * (1.0 - a.w_hi) + bot * a.w_hi;
      }
    }
  }
  const std::size_t ia = input.id();
  return input.tape()->record(
      std::move(out), {input},
      [ia, c, h, w, oh, ow, ty = std::move(ty), tx = std::move(tx)](Tape& t, std::span<const double> g) {
        auto d = t.grad_buffer(ia);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double* p = d.data() + ch * h * w;
          for (std::size_t i = 0; i < oh; ++i) {
            const auto& a = ty[i];
            for (std::size_t j = 0; j < ow; ++j) {
              const auto& b = tx[j];
              const double gv = g[(ch * oh + i) * ow + j];
              const double gt = gv * (1.0 - a.w_hi), gb = gv * a.w_hi;
              p[a.lo * w + b.lo] += gt * (1.0 - b.w_hi);
              p[a.lo * w + b.hi] += gt * b.w_hi;
              p[a.hi * w + b.lo] += gb * (1.0 - b.w_hi);
              p[a.hi * w + b.hi] += gb * b.w_hi;
            }
          }
        }
      });
}

/// Stacks two C×H×W maps along the channel axis.
inline Var concat_channels(Var a, Var b) {
  detail::require_rank(a, 3, "concat_channels");
  detail::require_rank(b, 3, "concat_channels");
  if (a.shape()[1] != b.shape()[1] || a.shape()[2] != b.shape()[2]) {
    throw ShapeError("concat_channels: spatial extents differ, " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
  const std::size_t na = a.value().size(), nb = b.value().size();
  AlignedBuffer data;
  data.reserve(na + nb);
  data.insert(data.end(), a.value().data().begin(), a.value().data().end());
  data.insert(data.end(), b.value().data().begin(), b.value().data().end());
  Tensor out(Shape{a.shape()[0] + b.shape()[0], a.shape()[1], a.shape()[2]}, std::move(data));
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, na, nb](Tape& t, std::span<const double> g) {
    if (t.requires_grad(ia)) {
      auto d = t.grad_buffer(ia);
      for (std::size_t i = 0; i < na; ++i) d[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto d = t.grad_buffer(ib);
      for (std::size_t i = 0; i < nb; ++i) d[i] += g[na + i];
    }
  });
}

/// C×h×w map → (h·w)×C token matrix; row r is spatial location (r / w, r % w).
inline Var map_to_tokens(Var a) {
  detail::require_rank(a, 3, "map_to_tokens");
  const std::size_t c = a.shape()[0], hw = a.shape()[1] * a.shape()[2];
  Tensor out(Shape{hw, c});
  detail::as_mat(out.data(), hw, c) = detail::as_mat(a.value().data(), c, hw).transpose();
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, c, hw](Tape& t, std::span<const double> g) {
    detail::as_mat(t.grad_buffer(ia), c, hw) += detail::as_mat(g, hw, c).transpose();
  });
}

/// Inverse of map_to_tokens.
inline Var tokens_to_map(Var a, std::size_t height, std::size_t width) {
  detail::require_rank(a, 2, "tokens_to_map");
  const std::size_t hw = a.shape()[0], c = a.shape()[1];
  if (hw != height * width) throw ShapeError("tokens_to_map: token count does not match spatial extents");
  Tensor out(Shape{c, height, width});
  detail::as_mat(out.data(), c, hw) = detail::as_mat(a.value().data(), hw, c).transpose();
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, c, hw](Tape& t, std::span<const double> g) {
    detail::as_mat(t.grad_buffer(ia), hw, c) += detail::as_mat(g, c, hw).transpose();
  });
}

}  // namespace ucount
