// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

namespace lem::eval {

struct Summary {
  std::size_t count{0};
  double mean{0.0};
  double std{0.0};  // sample standard deviation (n - 1)
  double median{0.0};
  double p5{0.0};
  double p95{0.0};
  double q25{0.0};
  double q75{0.0};
};

// Percentile of sorted data by linear interpolation between closest ranks:
// position q * (n - 1), q in [0, 1].
double percentile_sorted(const std::vector<double>& sorted, double q);

Summary summarize(std::vector<double> values);

struct TTest {
  std::size_t n{0};
  double mean_diff{0.0};
  double t{0.0};
  double p_less{1.0};     // H1: mean(a - b) < 0
  double p_greater{1.0};  // H1: mean(a - b) > 0
};

// Paired t-test on a[i] - b[i].
TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace lem::eval
