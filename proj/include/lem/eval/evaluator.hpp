// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lem/data/features.hpp"
#include "lem/model/lem_model.hpp"

namespace lem::eval {

enum class Side { kBuy, kSell, kBaseline };

struct ScenarioKey {
  Side side{Side::kBuy};
  bool vwap{true};
  bool notional{false};
  // 1..N, N + 1 for the match scenario, 0 for full-horizon baselines.
  std::size_t min_period{1};

  bool operator==(const ScenarioKey&) const = default;
};

std::string side_name(Side s);
std::string min_period_name(std::size_t min_period, std::size_t horizon);

struct ScenarioSamples {
  ScenarioKey key;
  std::vector<double> slippage_bps;       // per window
  std::vector<std::size_t> stop_step;     // per window
  std::vector<double> cumulative;         // per window, N cumulative fractions
};

struct EvaluationResult {
  std::size_t horizon{0};
  std::vector<std::int64_t> start_ts;
  std::vector<std::string> asset_ids;
  // Baselines (notional, volume) first, then model paths in path order.
  std::vector<ScenarioSamples> scenarios;

  std::size_t windows() const { return start_ts.size(); }
  const ScenarioSamples& at(const ScenarioKey& key) const;
};

// Empty result carrying the scenario grid for horizon N.
EvaluationResult make_result(std::size_t horizon);

// Hard-execution scoring of allocations [W, N, N+1, 4, 2] against window
// prices and volumes [W, N], plus uniform TWAP baselines.
EvaluationResult evaluate_allocations(const std::vector<double>& alloc,
                                      const std::vector<double>& prices,
                                      const std::vector<double>& volumes, std::size_t windows,
                                      std::size_t horizon);

// Runs the model over every window (batched, in parallel) and scores it.
template <typename T>
EvaluationResult evaluate_model(const model::LemModel<T>& m, const data::WindowSet& set,
                                std::size_t batch_size);

void write_samples(const EvaluationResult& r, const std::filesystem::path& path);
EvaluationResult read_samples(const std::filesystem::path& path);

}  // namespace lem::eval
