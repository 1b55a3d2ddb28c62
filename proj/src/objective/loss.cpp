// SPDX-License-Identifier: Apache-2.0

#include "lem/objective/loss.hpp"

#include <cmath>

#include <fmt/format.h>

#include "lem/util/errors.hpp"

namespace lem::objective {

using namespace lem::ad;

std::vector<double> base_mask(std::size_t horizon) {
  const std::size_t N = horizon;
  std::vector<double> m(N * (N + 1), 0.0);
  for (std::size_t t = 0; t < N; ++t) {
    for (std::size_t n = 0; n <= N; ++n) {
      m[t * (N + 1) + n] = t <= n ? 1.0 : 0.0;
    }
  }
  return m;
}

std::vector<double> volume_guard(const std::vector<double>& volumes, std::size_t batch,
                                 std::size_t horizon) {
  std::vector<double> g(batch * horizon, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    double seen = 0.0;
    for (std::size_t t = 0; t < horizon; ++t) {
      g[b * horizon + t] = (t == 0 || seen > 0.0) ? 1.0 : 0.0;
      seen += volumes[b * horizon + t];
    }
  }
  return g;
}

namespace {

template <typename T>
Tensor<T> constant_from(Shape shape, const std::vector<double>& v) {
  return Tensor<T>::constant(std::move(shape), std::vector<T>(v.begin(), v.end()));
}

template <typename T>
void check_alloc_shape(const Tensor<T>& alloc, const Tensor<T>& prices, const Tensor<T>& volumes) {
  if (alloc.rank() != 5 || prices.rank() != 2 || volumes.rank() != 2) {
    throw ShapeError(fmt::format("objective expects alloc [B,N,N+1,4,2] and [B,N] markets, got {}, {}, {}",
                                 shape_str(alloc.shape()), shape_str(prices.shape()),
                                 shape_str(volumes.shape())));
  }
  const std::size_t B = alloc.dim(0);
  const std::size_t N = alloc.dim(1);
  if (alloc.dim(2) != N + 1 || alloc.dim(3) != 4 || alloc.dim(4) != 2 || prices.dim(0) != B ||
      prices.dim(1) != N || volumes.dim(0) != B || volumes.dim(1) != N) {
    throw ShapeError(fmt::format("objective shape mismatch: alloc {}, prices {}, volumes {}",
                                 shape_str(alloc.shape()), shape_str(prices.shape()),
                                 shape_str(volumes.shape())));
  }
}

template <typename T>
void require_finite(const Tensor<T>& t, const char* term) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(static_cast<double>(t.at(i)))) {
      throw NonFiniteLoss(term, fmt::format("non-finite value {} in loss term '{}' at flat index {}",
                                            static_cast<double>(t.at(i)), term, i));
    }
  }
}

}  // namespace

template <typename T>
MaskSet<T> build_masks(const Tensor<T>& alloc, const Tensor<T>& volumes, T sharpness) {
  const std::size_t B = alloc.dim(0);
  const std::size_t N = alloc.dim(1);
  MaskSet<T> m;
  const auto base = base_mask(N);
  m.base = constant_from<T>({1, N, N + 1, 1, 1}, base);
  std::vector<double> inv(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    inv[i] = 1.0 - base[i];
  }
  const std::vector<double> vols(volumes.data().begin(), volumes.data().end());
  m.guard = constant_from<T>({B, N, 1, 1, 1}, volume_guard(vols, B, N));
  m.remaining = reverse_cumsum(alloc, 1);
  m.soft = sigmoid(mul_scalar(m.remaining, sharpness));
  m.effective = m.base + constant_from<T>({1, N, N + 1, 1, 1}, inv) * m.soft;
  return m;
}

template <typename T>
Tensor<T> achieved_price_volume(const Tensor<T>& alloc_vol, const Tensor<T>& prices,
                                const Tensor<T>& eff_vol, T eps) {
  const std::size_t B = prices.dim(0);
  const std::size_t N = prices.dim(1);
  auto p = reshape(prices, {B, N, 1, 1});
  auto v = alloc_vol * eff_vol;
  return sum(v * p, 1) / add_scalar(sum(v, 1), eps);
}

template <typename T>
Tensor<T> achieved_price_notional(const Tensor<T>& alloc_notional, const Tensor<T>& prices,
                                  const Tensor<T>& eff_notional, T eps) {
  const std::size_t B = prices.dim(0);
  const std::size_t N = prices.dim(1);
  auto p = reshape(prices, {B, N, 1, 1});
  auto n = alloc_notional * eff_notional;
  return sum(n, 1) / add_scalar(sum(n / p, 1), eps);
}

template <typename T>
Tensor<T> benchmark_prices(const Tensor<T>& volumes, const Tensor<T>& prices,
                           const MaskSet<T>& masks, T eps) {
  const std::size_t B = prices.dim(0);
  const std::size_t N = prices.dim(1);
  auto p = reshape(prices, {B, N, 1, 1, 1});
  auto vol = reshape(volumes, {B, N, 1, 1, 1});
  auto w_vwap = vol * maximum(masks.effective, masks.guard);
  auto vwap_kind = Tensor<T>::constant({1, 1, 1, 4, 1}, {T{1}, T{0}, T{1}, T{0}});
  auto twap_kind = Tensor<T>::constant({1, 1, 1, 4, 1}, {T{0}, T{1}, T{0}, T{1}});
  auto w = w_vwap * vwap_kind + masks.effective * twap_kind;
  return add_scalar(sum(w * p, 1), eps) / add_scalar(sum(w, 1), eps);
}

template <typename T>
Tensor<T> performance_diff(const Tensor<T>& achieved, const Tensor<T>& benchmark) {
  return mul_scalar(add_scalar(achieved / benchmark, T{-1}), T{100});
}

template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& diff) {
  if (diff.rank() != 4 || diff.dim(1) != 2 || diff.dim(3) != 4 || diff.dim(2) < 2) {
    throw ShapeError(fmt::format("total_loss expects D [B,2,N+1,4], got {}",
                                 shape_str(diff.shape())));
  }
  const std::size_t B = diff.dim(0);
  const std::size_t N = diff.dim(2) - 1;
  auto flexible = slice(diff, 2, 0, N);
  auto spread = slice(flexible, 3, 0, 2) - slice(flexible, 3, 2, 2);
  LossBreakdown<T> out;
  out.pnl = sum_all(softplus(spread));
  out.risk = sum_all(softplus(abs(slice(diff, 2, N, 1))));
  out.normalizer = static_cast<double>(B * 2 * N * 2 + B * 2 * 4);
  out.total = mul_scalar(out.pnl + out.risk, static_cast<T>(1.0 / out.normalizer));
  return out;
}

template <typename T>
ExecutionOutcome<T> evaluate_objective(const Tensor<T>& alloc, const Tensor<T>& prices,
                                       const Tensor<T>& volumes, const ObjectiveConfig& cfg) {
  check_alloc_shape(alloc, prices, volumes);
  require_finite(alloc, "allocation");
  const std::size_t B = alloc.dim(0);
  const std::size_t N = alloc.dim(1);
  const T eps = static_cast<T>(cfg.epsilon);
  auto masks = build_masks(alloc, volumes, static_cast<T>(cfg.completion_sharpness));
  auto by_type = [&](const Tensor<T>& t, std::size_t a) {
    return reshape(slice(t, 4, a, 1), {B, N, N + 1, 4});
  };
  auto ach_vol = achieved_price_volume(by_type(alloc, 0), prices, by_type(masks.effective, 0), eps);
  auto ach_not =
      achieved_price_notional(by_type(alloc, 1), prices, by_type(masks.effective, 1), eps);

  ExecutionOutcome<T> out;
  out.achieved = stack(std::vector<Tensor<T>>{ach_vol, ach_not}, 1);
  out.benchmark = permute(benchmark_prices(volumes, prices, masks, eps), {0, 3, 1, 2});
  require_finite(out.achieved, "achieved_price");
  require_finite(out.benchmark, "benchmark_price");
  out.diff = performance_diff(out.achieved, out.benchmark);
  require_finite(out.diff, "performance_diff");
  out.loss = total_loss(out.diff);
  require_finite(out.loss.pnl, "pnl");
  require_finite(out.loss.risk, "risk");
  require_finite(out.loss.total, "total");
  return out;
}

std::size_t stop_step(const double* alloc, std::size_t horizon, std::size_t min_period,
                      double eps) {
  if (min_period > horizon) {
    return horizon;
  }
  double cum = 0.0;
  for (std::size_t t = 1; t <= horizon; ++t) {
    cum += alloc[t - 1];
    if (t >= min_period && cum >= 1.0 - eps) {
      return t;
    }
  }
  return horizon;
}

HardResult hard_execution(const double* alloc, const double* prices, const double* volumes,
                          std::size_t horizon, std::size_t min_period, bool vwap_benchmark,
                          bool notional, double eps) {
  HardResult r;
  r.stop_step = stop_step(alloc, horizon, min_period, eps);
  double spent = 0.0;
  double shares = 0.0;
  double market_notional = 0.0;
  double market_volume = 0.0;
  double price_sum = 0.0;
  for (std::size_t t = 0; t < r.stop_step; ++t) {
    if (notional) {
      spent += alloc[t];
      shares += alloc[t] / prices[t];
    } else {
      shares += alloc[t];
      spent += alloc[t] * prices[t];
    }
    market_notional += volumes[t] * prices[t];
    market_volume += volumes[t];
    price_sum += prices[t];
  }
  const double twap = price_sum / static_cast<double>(r.stop_step);
  r.achieved = shares > 0.0 ? spent / shares : twap;
  r.benchmark = vwap_benchmark && market_volume > 0.0 ? market_notional / market_volume : twap;
  r.slippage_bps = (r.achieved / r.benchmark - 1.0) * 1e4;
  return r;
}

#define LEM_INSTANTIATE_OBJECTIVE(T)                                                          \
  template MaskSet<T> build_masks<T>(const Tensor<T>&, const Tensor<T>&, T);                  \
  template Tensor<T> achieved_price_volume<T>(const Tensor<T>&, const Tensor<T>&,             \
                                              const Tensor<T>&, T);                           \
  template Tensor<T> achieved_price_notional<T>(const Tensor<T>&, const Tensor<T>&,           \
                                                const Tensor<T>&, T);                         \
  template Tensor<T> benchmark_prices<T>(const Tensor<T>&, const Tensor<T>&,                  \
                                         const MaskSet<T>&, T);                               \
  template Tensor<T> performance_diff<T>(const Tensor<T>&, const Tensor<T>&);                 \
  template LossBreakdown<T> total_loss<T>(const Tensor<T>&);                                  \
  template ExecutionOutcome<T> evaluate_objective<T>(const Tensor<T>&, const Tensor<T>&,      \
                                                     const Tensor<T>&, const ObjectiveConfig&);

LEM_INSTANTIATE_OBJECTIVE(float)
LEM_INSTANTIATE_OBJECTIVE(double)

#undef LEM_INSTANTIATE_OBJECTIVE

}  // namespace lem::objective
