// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lem/model/lem_model.hpp"

namespace lem::train {

struct GradCheckOptions {
  double step{1e-6};
  double tolerance{1e-4};
  double sample_fraction{0.01};
  std::size_t min_samples{5};
  // Denominator floor of the relative error, so that gradients at rounding
  // level do not register as failures.
  double denominator_floor{1e-4};
  std::uint64_t seed{0};
  bool include_allocation_group{true};
  // Test hook: scales the analytic gradient of one group.
  std::string corrupt_group;
  double corrupt_factor{1.0};
};

struct GroupResult {
  std::string group;
  std::size_t size{0};
  std::size_t checked{0};
  // Probes whose +/- step switched a min/max/abs branch.
  std::size_t skipped_kink{0};
  double max_rel_error{0.0};
  std::size_t worst_index{0};
  double worst_analytic{0.0};
  double worst_numeric{0.0};
  bool passed{true};
};

struct GradCheckReport {
  std::vector<GroupResult> groups;
  double tolerance{0.0};
  bool passed{true};

  std::vector<std::string> failing_groups() const;
  nlohmann::json to_json() const;
};

// Central differences of the total loss on `batch` against reverse-mode
// gradients, for a sample of entries of every parameter tensor and (when
// enabled) of the allocation tensor fed into the objective.
GradCheckReport grad_check(model::LemModel<double>& m, const model::Batch<double>& batch,
                           const GradCheckOptions& opt);

}  // namespace lem::train
