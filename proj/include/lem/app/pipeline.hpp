// SPDX-License-Identifier: Apache-2.0
//
// The stages behind each CLI subcommand. Every stage reads its inputs from
// and writes its artifacts to the paths configured in AppConfig.

#pragma once

#include <filesystem>
#include <ostream>
#include <vector>

#include "lem/app/config.hpp"
#include "lem/eval/evaluator.hpp"
#include "lem/train/grad_check.hpp"
#include "lem/train/trainer.hpp"

namespace lem::app {

// Synthetic candles (one CSV per asset) plus a manifest with split dates.
std::vector<fs::path> run_synth(const AppConfig& cfg);

struct PrepareSummary {
  std::size_t train{0};
  std::size_t validation{0};
  std::size_t test{0};
  std::vector<std::string> warnings;
};

// Feature windows for every manifest asset, split by date.
PrepareSummary run_prepare(const AppConfig& cfg);

// Trains from the prepared splits; writes the checkpoint, the epoch log and
// the JSON report.
train::TrainReport run_train(const AppConfig& cfg, std::ostream& log);

// Hard-execution evaluation of the checkpoint on the configured split.
eval::EvaluationResult run_evaluate(const AppConfig& cfg);

std::vector<fs::path> run_report(const AppConfig& cfg);

// Finite-difference check of a small randomly initialised model on a random
// batch; the report is also written to output_dir/gradcheck.json.
train::GradCheckReport run_gradcheck(const AppConfig& cfg);

}  // namespace lem::app
