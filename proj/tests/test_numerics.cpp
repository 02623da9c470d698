#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "ucount/numerics/grad_check.hpp"
#include "ucount/numerics/ops.hpp"

namespace ucount {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// Independent nested-loop reference for zero-padded 3×3 (or 1×1) cross-correlation.
Tensor conv_reference(const Tensor& x, const Tensor& k, const Tensor& b) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2), f = k.dim(0), ks = k.dim(2);
  const long pad = static_cast<long>(ks / 2);
  Tensor out(Shape{f, h, w});
  for (std::size_t o = 0; o < f; ++o)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        double acc = b[o];
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t u = 0; u < ks; ++u)
            for (std::size_t v = 0; v < ks; ++v) {
              const long si = static_cast<long>(i + u) - pad, sj = static_cast<long>(j + v) - pad;
              if (si < 0 || sj < 0 || si >= static_cast<long>(h) || sj >= static_cast<long>(w)) continue;
              acc += k[((o * c + ch) * ks + u) * ks + v] * x.at(ch, si, sj);
            }
        out.at(o, i, j) = acc;
      }
  return out;
}

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor(Shape{2, 0}), ShapeError);
}

TEST(Tape, RootGradientIsOne) {
  Tape tape;
  Var x = tape.variable(Tensor(Shape{3}, 2.0));
  Var y = sum(square(x));
  tape.backward(y);
  EXPECT_DOUBLE_EQ(y.grad().item(), 1.0);
  EXPECT_EQ(x.grad().shape(), x.shape());
  const Tensor g = x.grad();
  for (double v : g.data()) EXPECT_DOUBLE_EQ(v, 4.0);
}

TEST(Tape, BackwardNeedsScalarRoot) {
  Tape tape;
  Var x = tape.variable(Tensor(Shape{3}, 2.0));
  EXPECT_THROW(tape.backward(x), ShapeError);
}

TEST(Tape, ConstantsReceiveNoGradient) {
  Tape tape;
  Var a = tape.constant(Tensor(Shape{2}, 1.0));
  Var b = tape.variable(Tensor(Shape{2}, 3.0));
  tape.backward(sum(mul(a, b)));
  EXPECT_FALSE(a.requires_grad());
  EXPECT_EQ(a.grad(), Tensor(Shape{2}, 0.0));
  EXPECT_EQ(b.grad(), Tensor(Shape{2}, 1.0));
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  std::mt19937_64 rng(1);
  Tape tape;
  Var eye = tape.constant(Tensor(Shape{2, 2}, std::vector<double>{1, 0, 0, 1}));
  Tensor b = random_tensor({2, 5}, rng);
  EXPECT_EQ(matmul(eye, tape.constant(b)).value(), b);
}

TEST(Matmul, HandEvaluation) {
  Tape tape;
  Var a = tape.constant(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3, 4}));
  Var b = tape.constant(Tensor(Shape{2, 1}, std::vector<double>{1, 1}));
  EXPECT_EQ(matmul(a, b).value(), Tensor(Shape{2, 1}, std::vector<double>{3, 7}));
}

TEST(Matmul, GradientOfSumIsOnesTimesBTransposed) {
  std::mt19937_64 rng(2);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
  // Finite-difference oracle for d sum(A·B) / dA.
  Tensor expected(Shape{3, 4});
  const double h = 1e-6;
  auto eval = [&](const Tensor& at) {
    Tape t;
    return sum(matmul(t.constant(at), t.constant(b))).value().item();
  };
  for (std::size_t i = 0; i < a.size(); ++i) {
    Tensor up = a, down = a;
    up[i] += h;
    down[i] -= h;
    expected[i] = (eval(up) - eval(down)) / (2 * h);
  }
  Tape tape;
  Var va = tape.variable(a);
  tape.backward(sum(matmul(va, tape.constant(b))));
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_NEAR(va.grad().at(r, c), expected.at(r, c), 1e-8);
      EXPECT_NEAR(va.grad().at(r, c), b.at(c, 0) + b.at(c, 1), 1e-12);
    }
}

TEST(Matmul, RejectsInnerMismatch) {
  Tape tape;
  Var a = tape.constant(Tensor(Shape{2, 3}));
  Var b = tape.constant(Tensor(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3] x [2x3]"), std::string::npos);
  }
}

TEST(Conv2d, ZeroInputZeroBias) {
  std::mt19937_64 rng(3);
  Tape tape;
  Var y = conv2d(tape.constant(Tensor(Shape{2, 5, 6})), tape.constant(random_tensor({3, 2, 3, 3}, rng)),
                 tape.constant(Tensor(Shape{3})));
  EXPECT_EQ(y.value(), Tensor(Shape{3, 5, 6}));
}

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(4);
  Tensor x = random_tensor({1, 6, 5}, rng);
  Tensor k(Shape{1, 1, 3, 3});
  k[4] = 1.0;
  Tape tape;
  EXPECT_EQ(conv2d(tape.constant(x), tape.constant(k), tape.constant(Tensor(Shape{1}))).value(), x);
}

TEST(Conv2d, MatchesNestedLoopReference) {
  std::mt19937_64 rng(5);
  for (std::size_t ks : {1u, 3u}) {
    Tensor x = random_tensor({1, 4, 4}, rng), k = random_tensor({2, 1, ks, ks}, rng), b = random_tensor({2}, rng);
    Tape tape;
    Tensor y = conv2d(tape.constant(x), tape.constant(k), tape.constant(b)).value();
    Tensor ref = conv_reference(x, k, b);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
  }
  Tensor x = random_tensor({3, 7, 5}, rng), k = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
  Tape tape;
  Tensor y = conv2d(tape.constant(x), tape.constant(k), tape.constant(b)).value();
  Tensor ref = conv_reference(x, k, b);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv2d, LinearInInput) {
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({2, 6, 6}, rng), z = random_tensor({2, 6, 6}, rng), k = random_tensor({3, 2, 3, 3}, rng);
  const double alpha = 0.7, beta = -1.9;
  Tensor mix(x.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * x[i] + beta * z[i];
  Tape tape;
  Var kv = tape.constant(k), bv = tape.constant(Tensor(Shape{3}));
  Tensor lhs = conv2d(tape.constant(mix), kv, bv).value();
  Tensor cx = conv2d(tape.constant(x), kv, bv).value(), cz = conv2d(tape.constant(z), kv, bv).value();
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], alpha * cx[i] + beta * cz[i], 1e-10);
}

TEST(Conv2d, RejectsChannelMismatch) {
  Tape tape;
  EXPECT_THROW(conv2d(tape.constant(Tensor(Shape{2, 4, 4})), tape.constant(Tensor(Shape{1, 3, 3, 3})),
                      tape.constant(Tensor(Shape{1}))),
               ShapeError);
}

TEST(PoolResample, ConstantPreserved) {
  Tape tape;
  Var x = tape.constant(Tensor(Shape{2, 4, 6}, 1.25));
  for (double v : maxpool2x(x).value().data()) EXPECT_DOUBLE_EQ(v, 1.25);
  for (double v : upsample2x(x).value().data()) EXPECT_NEAR(v, 1.25, 1e-15);
}

TEST(PoolResample, MaxOfBlock) {
  Tape tape;
  Var x = tape.constant(Tensor(Shape{1, 2, 2}, std::vector<double>{1, 2, 3, 4}));
  EXPECT_EQ(maxpool2x(x).value(), Tensor(Shape{1, 1, 1}, std::vector<double>{4}));
}

TEST(PoolResample, OddExtentsRejected) {
  Tape tape;
  EXPECT_THROW(maxpool2x(tape.constant(Tensor(Shape{1, 3, 4}))), ShapeError);
}

TEST(PoolResample, UpsampleMatchesInterpolationFormula) {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({1, 3, 3}, rng);
  Tape tape;
  Tensor y = upsample2x(tape.constant(x)).value();
  ASSERT_EQ(y.shape(), (Shape{1, 6, 6}));
  // Direct evaluation: sample position (i + 0.5)/2 - 0.5 clamped to [0, 2], then bilinear blend.
  auto sample = [&](double sy, double sx) {
    sy = std::min(std::max(sy, 0.0), 2.0);
    sx = std::min(std::max(sx, 0.0), 2.0);
    const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
    const int y1 = std::min(y0 + 1, 2), x1 = std::min(x0 + 1, 2);
    const double fy = sy - y0, fx = sx - x0;
    return (1 - fy) * ((1 - fx) * x.at(0, y0, x0) + fx * x.at(0, y0, x1)) +
           fy * ((1 - fx) * x.at(0, y1, x0) + fx * x.at(0, y1, x1));
  };
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(y.at(0, i, j), sample((i + 0.5) / 2 - 0.5, (j + 0.5) / 2 - 0.5), 1e-12);
}

TEST(Activations, SoftplusValues) {
  Tape tape;
  Var z = tape.constant(Tensor(Shape{1}, 0.0));
  EXPECT_NEAR(softplus(z, 1.0).value()[0], std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus(z, 2.0).value()[0], 0.346574, 1e-6);
  EXPECT_NEAR(softplus(z, 2.0).value()[0], std::log(2.0) / 2.0, 1e-15);
  EXPECT_THROW(softplus(z, 0.0), ArgumentError);
}

TEST(Activations, SoftplusPositiveAndAsymptoticallyLinear) {
  for (double beta : {0.5, 1.0, 3.0}) {
    for (double x = -100.0; x <= 100.0; x += 0.37) EXPECT_GT(softplus_value(x, beta), 0.0);
    EXPECT_NEAR(softplus_value(50.0, beta) - 50.0, 0.0, 1e-9);
    EXPECT_LT(softplus_value(200.0, beta) - 200.0, softplus_value(20.0, beta) - 20.0 + 1e-15);
  }
}

TEST(Activations, SoftmaxSingleElement) {
  Tape tape;
  EXPECT_EQ(softmax_rows(tape.constant(Tensor(Shape{1, 1}, 42.0))).value(), Tensor(Shape{1, 1}, 1.0));
}

TEST(Activations, SoftmaxRowsAreDistributions) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Tape tape;
    Tensor y = softmax_rows(tape.constant(random_tensor({5, 9}, rng, -20.0, 20.0))).value();
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_GT(y.at(i, j), 0.0);
        EXPECT_LE(y.at(i, j), 1.0);
        s += y.at(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Activations, ReluSubgradientAtZeroIsZero) {
  Tape tape;
  Var x = tape.variable(Tensor(Shape{3}, std::vector<double>{-1.0, 0.0, 2.0}));
  tape.backward(sum(relu(x)));
  EXPECT_EQ(x.grad(), Tensor(Shape{3}, std::vector<double>{0.0, 0.0, 1.0}));
}

TEST(GradCheck, PolynomialIsExact) {
  auto f = [](Tape&, std::span<const Var> p) { return sum(square(p[0])); };
  GradCheckResult r = grad_check(f, {Tensor(Shape{1}, 3.0)});
  EXPECT_TRUE(r.passed(1e-8));
  EXPECT_LT(r.max_relative_error, 1e-8);
}

TEST(GradCheck, DetectsPlantedBug) {
  // x² with a backward that returns half the true derivative.
  auto f = [](Tape& t, std::span<const Var> p) {
    const std::size_t id = p[0].id();
    Tensor v = p[0].value();
    v[0] *= v[0];
    return t.record(std::move(v), {p[0]}, [id](Tape& tp, std::span<const double> g) {
      tp.grad_buffer(id)[0] += g[0] * tp.value(id)[0];
    });
  };
  GradCheckResult r = grad_check(f, {Tensor(Shape{1}, 3.0)});
  EXPECT_NEAR(r.max_relative_error, 0.5, 1e-6);
  EXPECT_FALSE(r.passed(1e-4));
}

TEST(GradCheck, ReportsNonFiniteWithParameterIndex) {
  GradCheckResult r = grad_check(
      [](Tape& t, std::span<const Var> p) {
        Tensor v = p[1].value();
        if (v[0] > 0.5) v[0] = std::numeric_limits<double>::infinity();
        return add(sum(p[0]), sum(t.constant(v)));
      },
      {Tensor(Shape{2}, 1.0), Tensor(Shape{1}, 0.5)}, 1e-3);
  EXPECT_FALSE(r.finite);
  EXPECT_EQ(r.worst_param, 1u);
  EXPECT_NE(r.message.find("parameter 1"), std::string::npos);
}

// Every differentiable op against central differences at random points.
TEST(GradCheck, AllOpsAgreeWithFiniteDifferences) {
  std::mt19937_64 rng(9);
  struct Case {
    const char* name;
    std::vector<Tensor> params;
    ScalarFunction f;
  };
  std::vector<Case> cases;
  // Random fixed projection so every output coordinate contributes to the scalar.
  auto project = [](Var v, Tape& t, std::mt19937_64 seed_rng) {
    Tensor proj = random_tensor(v.shape(), seed_rng);
    return sum(mul(v, t.constant(proj)));
  };
  cases.push_back({"matmul", {random_tensor({3, 4}, rng), random_tensor({4, 5}, rng)},
                   [&](Tape& t, std::span<const Var> p) { return project(matmul(p[0], p[1]), t, std::mt19937_64(1)); }});
  cases.push_back({"transpose", {random_tensor({3, 4}, rng)},
                   [&](Tape& t, std::span<const Var> p) { return project(transpose(p[0]), t, std::mt19937_64(2)); }});
  cases.push_back({"softmax", {random_tensor({3, 4}, rng, -3, 3)},
                   [&](Tape& t, std::span<const Var> p) { return project(softmax_rows(p[0]), t, std::mt19937_64(3)); }});
  cases.push_back({"conv3", {random_tensor({2, 5, 6}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)},
                   [&](Tape& t, std::span<const Var> p) {
                     return project(conv2d(p[0], p[1], p[2]), t, std::mt19937_64(4));
                   }});
  cases.push_back({"conv1", {random_tensor({2, 4, 4}, rng), random_tensor({3, 2, 1, 1}, rng), random_tensor({3}, rng)},
                   [&](Tape& t, std::span<const Var> p) {
                     return project(conv2d(p[0], p[1], p[2]), t, std::mt19937_64(5));
                   }});
  cases.push_back({"maxpool", {random_tensor({2, 4, 6}, rng)},
                   [&](Tape& t, std::span<const Var> p) { return project(maxpool2x(p[0]), t, std::mt19937_64(6)); }});
  cases.push_back({"upsample", {random_tensor({2, 3, 4}, rng)},
                   [&](Tape& t, std::span<const Var> p) { return project(upsample2x(p[0]), t, std::mt19937_64(7)); }});
  cases.push_back({"softplus", {random_tensor({10}, rng, -4, 4)},
                   [&](Tape& t, std::span<const Var> p) { return project(softplus(p[0], 1.7), t, std::mt19937_64(8)); }});
  cases.push_back({"relu", {random_tensor({10}, rng)},
                   [&](Tape& t, std::span<const Var> p) { return project(relu(p[0]), t, std::mt19937_64(9)); }});
  cases.push_back({"log", {random_tensor({10}, rng, 0.5, 2.0)},
                   [&](Tape& t, std::span<const Var> p) { return project(log(p[0]), t, std::mt19937_64(10)); }});
  cases.push_back({"elementwise", {random_tensor({6}, rng), random_tensor({6}, rng)},
                   [&](Tape& t, std::span<const Var> p) {
                     Var v = sub(mul(p[0], p[1]), scale(add_scalar(square(p[0]), 0.3), 2.0));
                     return project(add(v, p[1]), t, std::mt19937_64(11));
                   }});
  cases.push_back({"tokens", {random_tensor({3, 2, 4}, rng)},
                   [&](Tape& t, std::span<const Var> p) {
                     Var tok = map_to_tokens(p[0]);
                     return project(concat_channels(tokens_to_map(tok, 2, 4), p[0]), t, std::mt19937_64(12));
                   }});
  cases.push_back({"mean", {random_tensor({3, 3}, rng)},
                   [&](Tape&, std::span<const Var> p) { return mean(square(p[0])); }});
  for (const Case& c : cases) {
    GradCheckResult r = grad_check(c.f, c.params);
    EXPECT_TRUE(r.passed(1e-4)) << c.name << " error " << r.max_relative_error;
    EXPECT_LT(r.max_relative_error, 1e-6) << c.name;
  }
}

}  // namespace
}  // namespace ucount
