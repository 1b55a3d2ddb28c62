// SPDX-License-Identifier: Apache-2.0
//
// Run configuration shared by every CLI subcommand. One JSON document holds
// all sections; relative paths resolve against the working directory and
// unset artifact paths default to locations under output_dir.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lem/data/dataset.hpp"
#include "lem/data/features.hpp"
#include "lem/model/lem_model.hpp"
#include "lem/train/trainer.hpp"

namespace lem::app {

namespace fs = std::filesystem;

struct SynthSection {
  std::string regime{"mean_reverting"};
  std::size_t n_bars{20000};
  std::size_t assets{1};
  // Fractions of the bar range where the validation and test periods begin.
  double val_fraction{0.6};
  double test_fraction{0.8};
  data::SynthOptions options;
};

struct EvaluateSection {
  fs::path checkpoint;
  std::string split{"test"};
  std::size_t batch_size{256};
  fs::path samples;
};

struct ReportSection {
  fs::path samples;
  fs::path dir;
};

struct GradCheckSection {
  std::size_t batch{2};
  std::size_t hidden{4};
  std::size_t heads{2};
  std::size_t horizon{4};
  std::size_t channels{3};
  std::size_t lookback{4};
  double tolerance{1e-4};
  double step{1e-6};
  double sample_fraction{0.01};
};

struct AppConfig {
  nlohmann::json raw;
  std::uint64_t seed{0};
  fs::path output_dir{"lem_out"};
  SynthSection synth;
  fs::path manifest;
  fs::path dataset_dir;
  data::FeatureSpec features;
  // lookback / horizon / channels are taken from `features`.
  model::ModelConfig model;
  train::TrainConfig train;
  fs::path checkpoint;
  EvaluateSection evaluate;
  ReportSection report;
  GradCheckSection gradcheck;

  fs::path manifest_path() const;
  fs::path dataset_path(const std::string& split) const;
  fs::path checkpoint_path() const;
  fs::path eval_checkpoint_path() const;
  fs::path samples_path() const;
  fs::path report_samples_path() const;
  fs::path report_dir() const;
  fs::path train_log_path() const { return output_dir / "train_log.csv"; }
  fs::path train_report_path() const { return output_dir / "train_report.json"; }
};

// Applies "a.b.c=value"; the value is parsed as JSON and kept as a string
// when that fails.
void apply_override(nlohmann::json& j, const std::string& assignment);

AppConfig config_from_json(const nlohmann::json& j);

// Reads `path` (when given), applies overrides in order, then `seed`.
AppConfig load_config(const std::optional<fs::path>& path, const std::vector<std::string>& sets,
                      std::optional<std::uint64_t> seed);

}  // namespace lem::app
