// SPDX-License-Identifier: Apache-2.0

#include "lem/eval/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <boost/math/distributions/students_t.hpp>

namespace lem::eval {

double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

Summary summarize(std::vector<double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) {
    return s;
  }
  double total = 0.0;
  for (double v : values) {
    total += v;
  }
  s.mean = total / static_cast<double>(s.count);
  if (s.count > 1) {
    double ss = 0.0;
    for (double v : values) {
      ss += (v - s.mean) * (v - s.mean);
    }
    s.std = std::sqrt(ss / static_cast<double>(s.count - 1));
  }
  std::sort(values.begin(), values.end());
  s.median = percentile_sorted(values, 0.5);
  s.p5 = percentile_sorted(values, 0.05);
  s.p95 = percentile_sorted(values, 0.95);
  s.q25 = percentile_sorted(values, 0.25);
  s.q75 = percentile_sorted(values, 0.75);
  return s;
}

TTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("paired_t_test: samples differ in length");
  }
  TTest r;
  r.n = a.size();
  if (r.n < 2) {
    return r;
  }
  std::vector<double> d(r.n);
  for (std::size_t i = 0; i < r.n; ++i) {
    d[i] = a[i] - b[i];
  }
  const Summary s = summarize(d);
  r.mean_diff = s.mean;
  if (s.std == 0.0) {
    r.t = s.mean == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), s.mean);
    r.p_less = s.mean < 0.0 ? 0.0 : 1.0;
    r.p_greater = s.mean > 0.0 ? 0.0 : 1.0;
    return r;
  }
  r.t = s.mean / (s.std / std::sqrt(static_cast<double>(r.n)));
  boost::math::students_t dist(static_cast<double>(r.n - 1));
  r.p_less = boost::math::cdf(dist, r.t);
  r.p_greater = boost::math::cdf(boost::math::complement(dist, r.t));
  return r;
}

}  // namespace lem::eval
