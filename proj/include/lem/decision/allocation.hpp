// SPDX-License-Identifier: Apache-2.0
//
// Per-step allocation networks over the full scenario grid. Path m encodes
// (min_period n, strategy k, allocation type a) as m = (n * 4 + k) * 2 + a
// with strategies Buy-VWAP, Buy-TWAP, Sell-VWAP, Sell-TWAP and allocation
// types volume, notional.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lem/ad/ops.hpp"
#include "lem/model/params.hpp"
#include "lem/util/rng.hpp"

namespace lem::decision {

using ad::Shape;
using ad::Tensor;
using model::ParamStore;

inline constexpr std::size_t kStrategies = 4;
inline constexpr std::size_t kAllocTypes = 2;

enum Strategy : std::size_t { kBuyVwap = 0, kBuyTwap = 1, kSellVwap = 2, kSellTwap = 3 };
enum AllocType : std::size_t { kVolume = 0, kNotional = 1 };

inline bool is_vwap(std::size_t k) { return k == kBuyVwap || k == kSellVwap; }
inline bool is_buy(std::size_t k) { return k == kBuyVwap || k == kBuyTwap; }

inline std::size_t path_index(std::size_t n, std::size_t k, std::size_t a) {
  return (n * kStrategies + k) * kAllocTypes + a;
}

struct DecisionConfig {
  std::size_t horizon{12};
  std::size_t mlp_depth{2};
  std::size_t mlp_width{16};
  std::string activation{"elu"};
  double clip_sharpness{50.0};
  // Non-positive means the default 1 / N^2.
  double min_rate{0.0};
  double max_rate{1.0};
  std::size_t return_channel{0};
  std::size_t volume_channel{1};

  std::size_t paths() const { return (horizon + 1) * kStrategies * kAllocTypes; }
  double resolved_min_rate() const;
  std::size_t step_inputs(std::size_t hidden, std::size_t channels) const {
    return hidden + channels + (horizon - 1) + 3;
  }
  void validate(std::size_t channels) const;
};

// u + (x - u) * sigmoid(lambda * (u - x))
double soft_clip(double x, double u, double lambda);
template <typename T>
Tensor<T> soft_clip(const Tensor<T>& x, T u, T lambda);

// One independent MLP per path, evaluated for all paths at once.
template <typename T>
struct FusedStep {
  std::size_t paths{0}, inputs{0};
  std::string activation{"elu"};
  std::vector<Tensor<T>> weights;  // layer j: [M, in_j, out_j]
  std::vector<Tensor<T>> biases;   // layer j: [M, out_j]

  FusedStep() = default;
  FusedStep(ParamStore<T>& store, const std::string& prefix, std::size_t paths,
            std::size_t inputs, std::size_t depth, std::size_t width,
            const std::string& activation, double final_bias, Rng& rng);
  // [B, M, F] -> nonnegative raw rates [B, M]
  Tensor<T> forward(const Tensor<T>& x) const;
};

// max(0, min(soft_clip(raw + r_min, r_max, lambda), remaining))
template <typename T>
Tensor<T> constrain_step(const Tensor<T>& raw, const Tensor<T>& remaining,
                         const DecisionConfig& cfg);

template <typename T>
struct DecisionBlock {
  DecisionConfig cfg;
  std::size_t hidden{0}, channels{0};
  std::vector<FusedStep<T>> steps;  // N - 1 entries

  DecisionBlock() = default;
  DecisionBlock(ParamStore<T>& store, const std::string& prefix, const DecisionConfig& cfg,
                std::size_t hidden, std::size_t channels, Rng& rng);

  // Input of step s (1-based) for every path: [B, M, F_step].
  Tensor<T> step_input(const Tensor<T>& context, const Tensor<T>& features, std::size_t s,
                       const std::vector<Tensor<T>>& previous, const Tensor<T>& remaining) const;

  // context [B, T, H], features [B, T, D] -> allocations [B, N, N+1, 4, 2]
  Tensor<T> allocate(const Tensor<T>& context, const Tensor<T>& features) const;
};

}  // namespace lem::decision
