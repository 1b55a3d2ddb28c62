// SPDX-License-Identifier: Apache-2.0

#include "lem/train/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "lem/util/rng.hpp"

namespace lem::train {

using ad::BranchRecorder;
using ad::NoGradGuard;
using ad::Tensor;

std::vector<std::string> GradCheckReport::failing_groups() const {
  std::vector<std::string> out;
  for (const auto& g : groups) {
    if (!g.passed) {
      out.push_back(g.group);
    }
  }
  return out;
}

nlohmann::json GradCheckReport::to_json() const {
  nlohmann::ordered_json j;
  j["passed"] = passed;
  j["tolerance"] = tolerance;
  j["groups"] = nlohmann::ordered_json::array();
  for (const auto& g : groups) {
    j["groups"].push_back({{"group", g.group},
                           {"size", g.size},
                           {"checked", g.checked},
                           {"skipped_kink", g.skipped_kink},
                           {"max_rel_error", g.max_rel_error},
                           {"worst_index", g.worst_index},
                           {"worst_analytic", g.worst_analytic},
                           {"worst_numeric", g.worst_numeric},
                           {"passed", g.passed}});
  }
  j["failing_groups"] = failing_groups();
  return nlohmann::json::parse(j.dump());
}

namespace {

struct Probe {
  double value;
  std::uint64_t digest;
};

Probe probe(const std::function<double()>& loss) {
  BranchRecorder rec;
  const double v = loss();
  return {v, rec.digest()};
}

// Checks a sample of entries of `values` against `analytic`, re-evaluating
// `loss` after each perturbation.
GroupResult check_group(const std::string& name, std::span<double> values,
                        const std::vector<double>& analytic, std::uint64_t base_digest,
                        const std::function<double()>& loss, const GradCheckOptions& opt,
                        Rng& rng) {
  GroupResult r;
  r.group = name;
  r.size = values.size();
  const std::size_t n = values.size();
  const auto wanted = std::max<std::size_t>(
      static_cast<std::size_t>(std::ceil(opt.sample_fraction * static_cast<double>(n))),
      std::min(n, opt.min_samples));
  const auto order = rng.permutation(n);
  std::size_t cursor = 0;
  // Kink-adjacent probes are replaced by further samples while any remain.
  while (r.checked < wanted && cursor < n) {
    const std::size_t k = order[cursor++];
    const double saved = values[k];
    values[k] = saved + opt.step;
    const Probe plus = probe(loss);
    values[k] = saved - opt.step;
    const Probe minus = probe(loss);
    values[k] = saved;
    if (plus.digest != base_digest || minus.digest != base_digest) {
      ++r.skipped_kink;
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2.0 * opt.step);
    const double a = analytic[k];
    const double denom = std::max({std::abs(a), std::abs(numeric), opt.denominator_floor});
    const double rel = std::abs(a - numeric) / denom;
    ++r.checked;
    if (r.checked == 1 || rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_index = k;
      r.worst_analytic = a;
      r.worst_numeric = numeric;
    }
  }
  r.passed = r.max_rel_error <= opt.tolerance;
  return r;
}

}  // namespace

GradCheckReport grad_check(model::LemModel<double>& m, const model::Batch<double>& batch,
                           const GradCheckOptions& opt) {
  GradCheckReport report;
  report.tolerance = opt.tolerance;
  Rng rng(opt.seed);

  auto& params = m.params();
  params.zero_grad();
  std::uint64_t base_digest = 0;
  {
    BranchRecorder rec;
    auto outcome = m.evaluate(batch);
    base_digest = rec.digest();
    outcome.loss.total.backward();
  }
  std::vector<std::vector<double>> analytic(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = params.tensor(i);
    analytic[i].assign(t.size(), 0.0);
    if (t.has_grad()) {
      std::copy(t.grad().begin(), t.grad().end(), analytic[i].begin());
    }
    if (params.name(i) == opt.corrupt_group) {
      for (auto& g : analytic[i]) {
        g *= opt.corrupt_factor;
      }
    }
  }

  auto model_loss = [&]() {
    NoGradGuard no_grad;
    return m.evaluate(batch).loss.total.item();
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = params.tensor(i).mutable_data();
    auto r = check_group(params.name(i), values, analytic[i], base_digest, model_loss, opt, rng);
    report.passed = report.passed && r.passed;
    report.groups.push_back(std::move(r));
  }

  if (opt.include_allocation_group) {
    std::vector<double> alloc_values;
    ad::Shape alloc_shape;
    {
      NoGradGuard no_grad;
      auto a = m.allocate(batch.features);
      alloc_values.assign(a.data().begin(), a.data().end());
      alloc_shape = a.shape();
    }
    const auto& ocfg = m.config().objective;
    auto alloc = Tensor<double>::parameter(alloc_shape, alloc_values);
    std::uint64_t digest = 0;
    {
      BranchRecorder rec;
      auto outcome = objective::evaluate_objective(alloc, batch.prices, batch.volumes, ocfg);
      digest = rec.digest();
      outcome.loss.total.backward();
    }
    std::vector<double> grad(alloc.grad().begin(), alloc.grad().end());
    const std::string name = "objective.allocation";
    if (name == opt.corrupt_group) {
      for (auto& g : grad) {
        g *= opt.corrupt_factor;
      }
    }
    auto loss = [&]() {
      NoGradGuard no_grad;
      return objective::evaluate_objective(alloc, batch.prices, batch.volumes, ocfg)
          .loss.total.item();
    };
    auto r = check_group(name, alloc.mutable_data(), grad, digest, loss, opt, rng);
    report.passed = report.passed && r.passed;
    report.groups.push_back(std::move(r));
  }
  return report;
}

}  // namespace lem::train
