// SPDX-License-Identifier: Apache-2.0

#include "lem/decision/allocation.hpp"

#include <cmath>

#include <fmt/format.h>

#include "lem/util/errors.hpp"

namespace lem::decision {

using namespace lem::ad;

double DecisionConfig::resolved_min_rate() const {
  if (min_rate > 0.0) {
    return min_rate;
  }
  const double n = static_cast<double>(horizon);
  return 1.0 / (n * n);
}

void DecisionConfig::validate(std::size_t channels) const {
  if (horizon < 2) {
    throw ValidationError("decision horizon must be >= 2");
  }
  if (mlp_depth < 1 || mlp_width < 1) {
    throw ValidationError("decision.mlp_depth and decision.mlp_width must be >= 1");
  }
  if (activation != "elu" && activation != "tanh" && activation != "silu" &&
      activation != "relu") {
    throw ValidationError(fmt::format("unknown decision.activation '{}'", activation));
  }
  if (!(clip_sharpness > 0.0)) {
    throw ValidationError("decision.clip_sharpness must be positive");
  }
  const double r_min = resolved_min_rate();
  if (!(max_rate > 0.0 && max_rate <= 1.0)) {
    throw ValidationError("decision.max_rate must lie in (0, 1]");
  }
  if (!(r_min < max_rate) || r_min * static_cast<double>(horizon) > 1.0 + 1e-12) {
    throw ValidationError(fmt::format(
        "decision.min_rate {} violates r_min < r_max and r_min * N <= 1", r_min));
  }
  if (return_channel >= channels || volume_channel >= channels) {
    throw ValidationError(
        fmt::format("decision return/volume channels ({}, {}) exceed feature count {}",
                    return_channel, volume_channel, channels));
  }
}

double soft_clip(double x, double u, double lambda) {
  const double g = 1.0 / (1.0 + std::exp(-lambda * (u - x)));
  return u + (x - u) * g;
}

template <typename T>
Tensor<T> soft_clip(const Tensor<T>& x, T u, T lambda) {
  auto d = add_scalar(x, -u);
  auto g = sigmoid(mul_scalar(d, -lambda));
  return add_scalar(d * g, u);
}

namespace {

template <typename T>
Tensor<T> activate(const Tensor<T>& x, const std::string& kind) {
  if (kind == "tanh") {
    return tanh(x);
  }
  if (kind == "silu") {
    return silu(x);
  }
  if (kind == "relu") {
    return maximum(x, Tensor<T>::zeros({1}));
  }
  return elu(x);
}

}  // namespace

template <typename T>
FusedStep<T>::FusedStep(ParamStore<T>& store, const std::string& prefix, std::size_t paths_,
                        std::size_t inputs_, std::size_t depth, std::size_t width,
                        const std::string& activation_, double final_bias, Rng& rng)
    : paths(paths_), inputs(inputs_), activation(activation_) {
  std::size_t in = inputs;
  for (std::size_t j = 0; j < depth; ++j) {
    const bool last = j + 1 == depth;
    const std::size_t out = last ? 1 : width;
    weights.push_back(store.add(fmt::format("{}.w{}", prefix, j), {paths, in, out},
                                model::glorot_uniform(rng, in, out, paths * in * out)));
    biases.push_back(store.add(fmt::format("{}.b{}", prefix, j), {paths, out},
                               model::constant_values(paths * out, last ? final_bias : 0.0)));
    in = out;
  }
}

template <typename T>
Tensor<T> FusedStep<T>::forward(const Tensor<T>& x) const {
  if (x.rank() != 3 || x.dim(1) != paths || x.dim(2) != inputs) {
    throw ShapeError(fmt::format("fused step expects [B x {} x {}], got {}", paths, inputs,
                                 shape_str(x.shape())));
  }
  Tensor<T> y = x;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    y = grouped_matmul(y, weights[j]) + biases[j];
    if (j + 1 < weights.size()) {
      y = activate(y, activation);
    }
  }
  return softplus(reshape(y, {x.dim(0), paths}));
}

template <typename T>
Tensor<T> constrain_step(const Tensor<T>& raw, const Tensor<T>& remaining,
                         const DecisionConfig& cfg) {
  const T r_min = static_cast<T>(cfg.resolved_min_rate());
  auto temp = soft_clip(add_scalar(raw, r_min), static_cast<T>(cfg.max_rate),
                        static_cast<T>(cfg.clip_sharpness));
  return maximum(minimum(temp, remaining), Tensor<T>::zeros({1}));
}

template <typename T>
DecisionBlock<T>::DecisionBlock(ParamStore<T>& store, const std::string& prefix,
                                const DecisionConfig& cfg_, std::size_t hidden_,
                                std::size_t channels_, Rng& rng)
    : cfg(cfg_), hidden(hidden_), channels(channels_) {
  cfg.validate(channels);
  const double n = static_cast<double>(cfg.horizon);
  // Start near an even split: softplus(b) + r_min = 1 / N.
  const double target = 1.0 / n - cfg.resolved_min_rate();
  const double final_bias = target > 0.0 ? std::log(std::expm1(target)) : -10.0;
  const std::size_t F = cfg.step_inputs(hidden, channels);
  for (std::size_t s = 1; s < cfg.horizon; ++s) {
    steps.emplace_back(store, fmt::format("{}.step{}", prefix, s), cfg.paths(), F, cfg.mlp_depth,
                       cfg.mlp_width, cfg.activation, final_bias, rng);
  }
}

template <typename T>
Tensor<T> DecisionBlock<T>::step_input(const Tensor<T>& context, const Tensor<T>& features,
                                       std::size_t s, const std::vector<Tensor<T>>& previous,
                                       const Tensor<T>& remaining) const {
  const std::size_t B = context.dim(0);
  const std::size_t S = context.dim(1);
  const std::size_t N = cfg.horizon;
  const std::size_t M = cfg.paths();
  const std::size_t pos = S - N + (s - 1);
  auto ctx = reshape(slice(context, 1, pos, 1), {B, hidden});
  auto feat = reshape(slice(features, 1, pos, 1), {B, channels});
  auto market = concat(std::vector<Tensor<T>>{slice(feat, 1, cfg.return_channel, 1),
                                              slice(feat, 1, cfg.volume_channel, 1)},
                       1);
  auto shared = broadcast_to(reshape(concat(std::vector<Tensor<T>>{ctx, feat}, 1),
                                     {B, 1, hidden + channels}),
                             {B, M, hidden + channels});
  std::vector<Tensor<T>> parts{shared};
  for (const auto& a : previous) {
    parts.push_back(reshape(a, {B, M, 1}));
  }
  if (previous.size() < N - 1) {
    parts.push_back(Tensor<T>::zeros({B, M, N - 1 - previous.size()}));
  }
  parts.push_back(reshape(remaining, {B, M, 1}));
  parts.push_back(broadcast_to(reshape(market, {B, 1, 2}), {B, M, 2}));
  return concat(parts, 2);
}

template <typename T>
Tensor<T> DecisionBlock<T>::allocate(const Tensor<T>& context, const Tensor<T>& features) const {
  const std::size_t N = cfg.horizon;
  if (context.rank() != 3 || context.dim(2) != hidden || features.rank() != 3 ||
      features.dim(2) != channels || features.dim(0) != context.dim(0) ||
      features.dim(1) != context.dim(1) || context.dim(1) < N) {
    throw ShapeError(fmt::format("decision block got context {} and features {} (H={}, D={}, N={})",
                                 shape_str(context.shape()), shape_str(features.shape()), hidden,
                                 channels, N));
  }
  const std::size_t B = context.dim(0);
  const std::size_t M = cfg.paths();
  auto remaining = Tensor<T>::full({B, M}, T{1});
  std::vector<Tensor<T>> allocations;
  allocations.reserve(N);
  for (std::size_t s = 1; s < N; ++s) {
    auto input = step_input(context, features, s, allocations, remaining);
    auto alpha = constrain_step(steps[s - 1].forward(input), remaining, cfg);
    remaining = remaining - alpha;
    allocations.push_back(alpha);
  }
  allocations.push_back(remaining);
  return reshape(stack(allocations, 1), {B, N, N + 1, kStrategies, kAllocTypes});
}

#define LEM_INSTANTIATE_DECISION(T)                                                       \
  template Tensor<T> soft_clip<T>(const Tensor<T>&, T, T);                                \
  template Tensor<T> constrain_step<T>(const Tensor<T>&, const Tensor<T>&,                \
                                       const DecisionConfig&);                            \
  template struct FusedStep<T>;                                                           \
  template struct DecisionBlock<T>;

LEM_INSTANTIATE_DECISION(float)
LEM_INSTANTIATE_DECISION(double)

#undef LEM_INSTANTIATE_DECISION

}  // namespace lem::decision
