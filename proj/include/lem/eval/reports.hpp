// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lem/eval/evaluator.hpp"

namespace lem::eval {

inline constexpr double kHistogramLo = -500.0;
inline constexpr double kHistogramHi = 500.0;

// Writes slippage_by_min_period.csv, slippage_detailed_min_<p>.csv,
// execution_curves.csv, slippage_histograms.csv and
// slippage_histogram_clipping.csv. Returns the written paths.
std::vector<std::filesystem::path> emit_reports(const EvaluationResult& r,
                                                const std::filesystem::path& out_dir);

}  // namespace lem::eval
