// SPDX-License-Identifier: Apache-2.0
//
// Differentiable execution objective over allocation tensors
// [B, N, N+1, 4, 2] with bar prices and market volumes [B, N].

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lem/ad/ops.hpp"

namespace lem::objective {

using ad::Shape;
using ad::Tensor;

struct ObjectiveConfig {
  double completion_sharpness{100.0};
  double epsilon{1e-8};
};

// base[t, n] = 1 iff t <= n (1-based), last column all ones: [N, N+1].
std::vector<double> base_mask(std::size_t horizon);

// guard[b, t] = 1 iff t = 1 or some market volume before t is positive.
std::vector<double> volume_guard(const std::vector<double>& volumes, std::size_t batch,
                                 std::size_t horizon);

template <typename T>
struct MaskSet {
  Tensor<T> base;       // [1, N, N+1, 1, 1]
  Tensor<T> guard;      // [B, N, 1, 1, 1]
  Tensor<T> remaining;  // C, [B, N, N+1, 4, 2]
  Tensor<T> soft;       // sigmoid(alpha C)
  Tensor<T> effective;  // base + (1 - base) soft
};

template <typename T>
MaskSet<T> build_masks(const Tensor<T>& alloc, const Tensor<T>& volumes, T sharpness);

// Executed-price averages per allocation type over the effective steps,
// both [B, N+1, 4].
template <typename T>
Tensor<T> achieved_price_volume(const Tensor<T>& alloc_vol, const Tensor<T>& prices,
                                const Tensor<T>& eff_vol, T eps);
template <typename T>
Tensor<T> achieved_price_notional(const Tensor<T>& alloc_notional, const Tensor<T>& prices,
                                  const Tensor<T>& eff_notional, T eps);

// VWAP weights for strategies 0 and 2, uniform weights for 1 and 3;
// eff and the result carry the allocation-type axis: eff [B, N, N+1, 4, 2]
// -> [B, N+1, 4, 2].
template <typename T>
Tensor<T> benchmark_prices(const Tensor<T>& volumes, const Tensor<T>& prices,
                           const MaskSet<T>& masks, T eps);

template <typename T>
Tensor<T> performance_diff(const Tensor<T>& achieved, const Tensor<T>& benchmark);

template <typename T>
struct LossBreakdown {
  Tensor<T> pnl;
  Tensor<T> risk;
  Tensor<T> total;
  double normalizer{0.0};
};

// D laid out [B, 2, N+1, 4].
template <typename T>
LossBreakdown<T> total_loss(const Tensor<T>& diff);

template <typename T>
struct ExecutionOutcome {
  Tensor<T> achieved;   // [B, 2, N+1, 4]
  Tensor<T> benchmark;  // [B, 2, N+1, 4]
  Tensor<T> diff;       // [B, 2, N+1, 4], percent
  LossBreakdown<T> loss;
};

// Full objective; throws NonFiniteLoss naming the first non-finite term.
template <typename T>
ExecutionOutcome<T> evaluate_objective(const Tensor<T>& alloc, const Tensor<T>& prices,
                                       const Tensor<T>& volumes, const ObjectiveConfig& cfg);

// Hard (evaluation-time) execution of a single path.
struct HardResult {
  std::size_t stop_step{0};  // tau, 1-based
  double achieved{0.0};
  double benchmark{0.0};
  double slippage_bps{0.0};
};

// tau = smallest t >= n with cumulative allocation >= 1 - eps (else N);
// n = N + 1 denotes the match scenario and always runs the full horizon.
std::size_t stop_step(const double* alloc, std::size_t horizon, std::size_t min_period,
                      double eps = 1e-6);

// Achieved price and benchmark over steps 1..tau with binary masks. The VWAP
// benchmark falls back to the TWAP of the same steps when their market
// volume is zero.
HardResult hard_execution(const double* alloc, const double* prices, const double* volumes,
                          std::size_t horizon, std::size_t min_period, bool vwap_benchmark,
                          bool notional, double eps = 1e-6);

}  // namespace lem::objective
