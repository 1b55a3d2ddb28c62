// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include <gtest/gtest.h>

#include "lem/ad/ops.hpp"
#include "support/test_util.hpp"

namespace {

using namespace lem;
using namespace lem::ad;
using lem::testing::max_fd_error;
using lem::testing::probe;
using lem::testing::random_const;
using lem::testing::random_param;
using lem::testing::TensorD;

constexpr double kTol = 1e-6;

TEST(Ops, BroadcastingBinaryValues) {
  auto a = TensorD::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = TensorD::constant({3}, {10, 20, 30});
  auto c = TensorD::constant({2, 1}, {100, 200});
  const auto s = add(a, b);
  EXPECT_EQ(s.shape(), (Shape{2, 3}));
  EXPECT_DOUBLE_EQ(s.at(4), 25.0);
  const auto p = mul(a, c);
  EXPECT_DOUBLE_EQ(p.at(0), 100.0);
  EXPECT_DOUBLE_EQ(p.at(5), 1200.0);
  const auto o = sub(c, b);
  EXPECT_EQ(o.shape(), (Shape{2, 3}));
  EXPECT_DOUBLE_EQ(o.at(3), 190.0);
  EXPECT_DOUBLE_EQ(div(a, b).at(2), 0.1);
  EXPECT_ANY_THROW(add(a, TensorD::constant({2}, {1, 2})));
}

TEST(Ops, BinaryGradients) {
  Rng rng(1);
  auto a = random_param(rng, {2, 3, 4});
  auto b = random_param(rng, {3, 1});
  auto d = random_param(rng, {4}, 0.5, 2.0);
  EXPECT_LT(max_fd_error([&] { return probe(add(a, b)); }, {a, b}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(sub(b, a)); }, {a, b}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(mul(a, b)); }, {a, b}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(div(a, d)); }, {a, d}), kTol);
}

TEST(Ops, MinMaxPickBranchAndRouteGradient) {
  auto a = TensorD::parameter({3}, {1.0, 5.0, 2.0});
  auto b = TensorD::parameter({3}, {4.0, 3.0, 2.0});
  auto lo = minimum(a, b);
  EXPECT_EQ(std::vector<double>(lo.data().begin(), lo.data().end()),
            (std::vector<double>{1.0, 3.0, 2.0}));
  sum_all(lo).backward();
  EXPECT_EQ(std::vector<double>(a.grad().begin(), a.grad().end()),
            (std::vector<double>{1.0, 0.0, 1.0}));
  EXPECT_EQ(std::vector<double>(b.grad().begin(), b.grad().end()),
            (std::vector<double>{0.0, 1.0, 0.0}));
  a.zero_grad();
  b.zero_grad();
  auto hi = maximum(a, b);
  EXPECT_DOUBLE_EQ(hi.at(1), 5.0);
  sum_all(hi).backward();
  EXPECT_DOUBLE_EQ(a.grad()[1], 1.0);
  EXPECT_DOUBLE_EQ(b.grad()[0], 1.0);
}

TEST(Ops, BranchRecorderDistinguishesBranches) {
  auto a = TensorD::constant({2}, {1.0, 2.0});
  auto b = TensorD::constant({2}, {1.5, 1.5});
  auto c = TensorD::constant({2}, {2.0, 1.0});
  std::uint64_t d1 = 0, d2 = 0, d3 = 0;
  {
    BranchRecorder r;
    minimum(a, b);
    d1 = r.digest();
  }
  {
    BranchRecorder r;
    minimum(a, b);
    d2 = r.digest();
  }
  {
    BranchRecorder r;
    minimum(c, b);
    d3 = r.digest();
  }
  EXPECT_EQ(d1, d2);
  EXPECT_NE(d1, d3);
}

TEST(Ops, UnaryValues) {
  auto x = TensorD::constant({4}, {-2.0, 0.0, 0.5, 40.0});
  EXPECT_NEAR(sigmoid(x).at(1), 0.5, 1e-15);
  EXPECT_NEAR(tanh(x).at(2), std::tanh(0.5), 1e-15);
  EXPECT_NEAR(elu(x).at(0), std::expm1(-2.0), 1e-15);
  EXPECT_NEAR(elu(x).at(2), 0.5, 1e-15);
  EXPECT_NEAR(silu(x).at(2), 0.5 / (1 + std::exp(-0.5)), 1e-15);
  EXPECT_NEAR(softplus(x).at(1), std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus(x).at(3), 40.0, 1e-12);
  EXPECT_NEAR(abs(x).at(0), 2.0, 0.0);
  EXPECT_NEAR(exp(x).at(2), std::exp(0.5), 1e-15);
  EXPECT_NEAR(log(TensorD::constant({1}, {3.0})).at(0), std::log(3.0), 1e-15);
  EXPECT_DOUBLE_EQ(rsub_scalar(1.0, x).at(0), 3.0);
  EXPECT_DOUBLE_EQ(neg(x).at(2), -0.5);
}

TEST(Ops, UnaryGradients) {
  Rng rng(2);
  auto x = random_param(rng, {3, 4}, -2.0, 2.0);
  auto pos = random_param(rng, {5}, 0.2, 3.0);
  EXPECT_LT(max_fd_error([&] { return probe(sigmoid(x)); }, {x}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(tanh(x)); }, {x}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(elu(x)); }, {x}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(silu(x)); }, {x}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(softplus(x)); }, {x}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(exp(x)); }, {x}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(log(pos)); }, {pos}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(abs(x)); }, {x}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(mul_scalar(add_scalar(x, 0.3), -2.0)); }, {x}), kTol);
}

TEST(Ops, ShapeOps) {
  auto x = TensorD::constant({2, 3}, {0, 1, 2, 3, 4, 5});
  auto t = permute(x, {1, 0});
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(std::vector<double>(t.data().begin(), t.data().end()),
            (std::vector<double>{0, 3, 1, 4, 2, 5}));
  auto s = slice(x, 1, 1, 2);
  EXPECT_EQ(std::vector<double>(s.data().begin(), s.data().end()),
            (std::vector<double>{1, 2, 4, 5}));
  auto c = concat<double>({x, x}, 0);
  EXPECT_EQ(c.shape(), (Shape{4, 3}));
  EXPECT_DOUBLE_EQ(c.at(10), 4.0);
  auto st = stack<double>({x, x}, 1);
  EXPECT_EQ(st.shape(), (Shape{2, 2, 3}));
  EXPECT_DOUBLE_EQ(st.at(4), 1.0);
  auto b = broadcast_to(TensorD::constant({3}, {7, 8, 9}), {2, 3});
  EXPECT_DOUBLE_EQ(b.at(5), 9.0);
  EXPECT_ANY_THROW(reshape(x, {4, 2}));
}

TEST(Ops, ShapeGradients) {
  Rng rng(3);
  auto x = random_param(rng, {2, 3, 4});
  auto y = random_param(rng, {2, 1, 4});
  EXPECT_LT(max_fd_error([&] { return probe(permute(x, {2, 0, 1})); }, {x}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(slice(x, 2, 1, 2)); }, {x}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(concat<double>({x, y}, 1)); }, {x, y}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(stack<double>({y, y}, 0)); }, {y}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(broadcast_to(y, {2, 3, 4})); }, {y}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(reshape(x, {6, 4})); }, {x}), kTol);
}

TEST(Ops, Reductions) {
  auto x = TensorD::constant({2, 3}, {1, 2, 3, 4, 5, 6});
  auto s0 = sum(x, 0);
  EXPECT_EQ(s0.shape(), (Shape{3}));
  EXPECT_DOUBLE_EQ(s0.at(2), 9.0);
  auto s1 = sum(x, 1, true);
  EXPECT_EQ(s1.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(s1.at(1), 15.0);
  EXPECT_DOUBLE_EQ(sum_all(x).item(), 21.0);
  auto rc = reverse_cumsum(x, 1);
  EXPECT_EQ(std::vector<double>(rc.data().begin(), rc.data().end()),
            (std::vector<double>{6, 5, 3, 15, 11, 6}));
  Rng rng(4);
  auto p = random_param(rng, {3, 4, 2});
  EXPECT_LT(max_fd_error([&] { return probe(sum(p, 1)); }, {p}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(reverse_cumsum(p, 1)); }, {p}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(reverse_cumsum(p, 0)); }, {p}), kTol);
}

TEST(Ops, MatmulFamiliesMatchLoops) {
  Rng rng(5);
  auto x = random_param(rng, {2, 3, 4});
  auto w = random_param(rng, {4, 5});
  auto y = matmul(x, w);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 5}));
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t n = 0; n < 5; ++n) {
      double acc = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        acc += x.at(r * 4 + k) * w.at(k * 5 + n);
      }
      EXPECT_NEAR(y.at(r * 5 + n), acc, 1e-14);
    }
  }
  EXPECT_LT(max_fd_error([&] { return probe(matmul(x, w)); }, {x, w}), kTol);

  auto gx = random_param(rng, {3, 2, 4});
  auto gw = random_param(rng, {2, 4, 3});
  auto gy = grouped_matmul(gx, gw);
  ASSERT_EQ(gy.shape(), (Shape{3, 2, 3}));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t g = 0; g < 2; ++g) {
      for (std::size_t n = 0; n < 3; ++n) {
        double acc = 0;
        for (std::size_t k = 0; k < 4; ++k) {
          acc += gx.at((r * 2 + g) * 4 + k) * gw.at((g * 4 + k) * 3 + n);
        }
        EXPECT_NEAR(gy.at((r * 2 + g) * 3 + n), acc, 1e-14);
      }
    }
  }
  EXPECT_LT(max_fd_error([&] { return probe(grouped_matmul(gx, gw)); }, {gx, gw}), kTol);

  auto a = random_param(rng, {2, 3, 4});
  auto b = random_param(rng, {2, 4, 2});
  auto bt = random_param(rng, {2, 5, 4});
  auto ab = bmm(a, b);
  ASSERT_EQ(ab.shape(), (Shape{2, 3, 2}));
  double acc = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    acc += a.at((1 * 3 + 2) * 4 + k) * b.at((1 * 4 + k) * 2 + 1);
  }
  EXPECT_NEAR(ab.at((1 * 3 + 2) * 2 + 1), acc, 1e-14);
  auto abt = bmm(a, bt, true);
  ASSERT_EQ(abt.shape(), (Shape{2, 3, 5}));
  EXPECT_LT(max_fd_error([&] { return probe(bmm(a, b)); }, {a, b}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(bmm(a, bt, true)); }, {a, bt}), kTol);
}

TEST(Ops, SoftmaxFamilies) {
  Rng rng(6);
  auto x = random_param(rng, {2, 4, 4}, -3.0, 3.0);
  auto s = softmax_last(x);
  for (std::size_t r = 0; r < 8; ++r) {
    double total = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      total += s.at(r * 4 + j);
    }
    EXPECT_NEAR(total, 1.0, 1e-14);
  }
  auto c = causal_softmax(x);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t i = 0; i < 4; ++i) {
      double total = 0;
      double mx = -1e300;
      for (std::size_t j = 0; j <= i; ++j) {
        mx = std::max(mx, x.at((b * 4 + i) * 4 + j));
      }
      double z = 0;
      for (std::size_t j = 0; j <= i; ++j) {
        z += std::exp(x.at((b * 4 + i) * 4 + j) - mx);
      }
      for (std::size_t j = 0; j < 4; ++j) {
        const double v = c.at((b * 4 + i) * 4 + j);
        if (j > i) {
          EXPECT_EQ(v, 0.0);
        } else {
          EXPECT_NEAR(v, std::exp(x.at((b * 4 + i) * 4 + j) - mx) / z, 1e-14);
        }
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-14);
    }
  }
  EXPECT_LT(max_fd_error([&] { return probe(softmax_last(x)); }, {x}), kTol);
  EXPECT_LT(max_fd_error([&] { return probe(causal_softmax(x)); }, {x}), kTol);
}

TEST(Ops, LayerNorm) {
  Rng rng(7);
  auto x = random_param(rng, {3, 5}, -2.0, 2.0);
  auto y = layer_norm(x, 1e-5);
  for (std::size_t r = 0; r < 3; ++r) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 5; ++j) {
      m += x.at(r * 5 + j);
    }
    m /= 5;
    for (std::size_t j = 0; j < 5; ++j) {
      v += (x.at(r * 5 + j) - m) * (x.at(r * 5 + j) - m);
    }
    v /= 5;
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_NEAR(y.at(r * 5 + j), (x.at(r * 5 + j) - m) / std::sqrt(v + 1e-5), 1e-12);
    }
  }
  EXPECT_LT(max_fd_error([&] { return probe(layer_norm(x, 1e-5)); }, {x}), kTol);
}

TEST(Ops, BackwardAccumulatesAndNoGradSkipsGraph) {
  auto p = TensorD::parameter({2}, {1.0, 2.0});
  sum_all(mul(p, p)).backward();
  sum_all(mul(p, p)).backward();
  EXPECT_DOUBLE_EQ(p.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(p.grad()[1], 8.0);
  p.zero_grad();
  EXPECT_DOUBLE_EQ(p.grad()[1], 0.0);
  NoGradGuard ng;
  auto q = mul(p, p);
  EXPECT_FALSE(q.requires_grad());
}

TEST(Ops, SharedSubexpressionGradient) {
  Rng rng(8);
  auto x = random_param(rng, {4});
  EXPECT_LT(max_fd_error(
                [&] {
                  auto h = tanh(x);
                  return probe(add(mul(h, h), mul(h, x)));
                },
                {x}),
            kTol);
}

// Cox-de Boor recursion on the uniform extended knot vector.
double cox_de_boor(std::size_t i, std::size_t p, double x, const std::vector<double>& t) {
  if (p == 0) {
    return (t[i] <= x && x < t[i + 1]) ? 1.0 : 0.0;
  }
  double left = 0, right = 0;
  if (t[i + p] != t[i]) {
    left = (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(i, p - 1, x, t);
  }
  if (t[i + p + 1] != t[i + 1]) {
    right = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(i + 1, p - 1, x, t);
  }
  return left + right;
}

std::vector<double> knots(const SplineGrid& g) {
  const double h = (g.hi - g.lo) / static_cast<double>(g.grid_size);
  std::vector<double> t;
  for (std::size_t i = 0; i < g.grid_size + 2 * g.order + 1; ++i) {
    t.push_back(g.lo + (static_cast<double>(i) - static_cast<double>(g.order)) * h);
  }
  return t;
}

TEST(Splines, MatchesCoxDeBoorInsideGrid) {
  for (std::size_t order : {1u, 2u, 3u}) {
    SplineGrid g{5, order, -3.0, 3.0};
    const auto t = knots(g);
    std::vector<double> vals(g.basis_count()), ders(g.basis_count());
    for (int s = 0; s < 240; ++s) {
      const double x = -3.0 + 6.0 * s / 240.0;
      bspline_eval(x, g, vals.data(), ders.data());
      double unity = 0;
      for (std::size_t i = 0; i < g.basis_count(); ++i) {
        EXPECT_NEAR(vals[i], cox_de_boor(i, order, x, t), 1e-12) << "x=" << x << " i=" << i;
        unity += vals[i];
      }
      EXPECT_NEAR(unity, 1.0, 1e-12);
    }
  }
}

TEST(Splines, DerivativeMatchesFiniteDifference) {
  SplineGrid g;
  std::vector<double> v0(g.basis_count()), d0(g.basis_count()), up(g.basis_count()),
      down(g.basis_count());
  for (double x : {-2.7, -1.1, 0.35, 1.9, 2.95}) {
    bspline_eval(x, g, v0.data(), d0.data());
    bspline_eval(x + 1e-6, g, up.data(), nullptr);
    bspline_eval(x - 1e-6, g, down.data(), nullptr);
    for (std::size_t i = 0; i < g.basis_count(); ++i) {
      EXPECT_NEAR(d0[i], (up[i] - down[i]) / 2e-6, 1e-7);
    }
  }
}

TEST(Splines, LinearExtrapolationOutsideRange) {
  SplineGrid g;
  std::vector<double> vb(g.basis_count()), db(g.basis_count()), vx(g.basis_count());
  for (double edge : {g.lo, g.hi}) {
    bspline_eval(edge, g, vb.data(), db.data());
    for (double off : {0.5, 2.0}) {
      const double x = edge == g.lo ? edge - off : edge + off;
      bspline_eval(x, g, vx.data(), nullptr);
      for (std::size_t i = 0; i < g.basis_count(); ++i) {
        EXPECT_NEAR(vx[i], vb[i] + db[i] * (x - edge), 1e-12);
      }
    }
  }
}

TEST(Splines, BasisTensorShapeAndGradient) {
  Rng rng(9);
  SplineGrid g;
  auto x = random_param(rng, {2, 3}, -4.0, 4.0);
  auto b = bspline_basis(x, g);
  ASSERT_EQ(b.shape(), (Shape{2, 3, g.basis_count()}));
  std::vector<double> v(g.basis_count());
  bspline_eval(x.at(4), g, v.data(), nullptr);
  for (std::size_t i = 0; i < g.basis_count(); ++i) {
    EXPECT_DOUBLE_EQ(b.at(4 * g.basis_count() + i), v[i]);
  }
  EXPECT_LT(max_fd_error([&] { return probe(bspline_basis(x, g)); }, {x}), 1e-5);
}

}  // namespace
