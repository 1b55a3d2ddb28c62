// SPDX-License-Identifier: Apache-2.0

#include "lem/eval/evaluator.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/os.h>

#include "lem/decision/allocation.hpp"
#include "lem/objective/loss.hpp"
#include "lem/util/errors.hpp"
#include "lem/util/parallel.hpp"

namespace lem::eval {

using decision::kAllocTypes;
using decision::kStrategies;

std::string side_name(Side s) {
  switch (s) {
    case Side::kBuy:
      return "BUY";
    case Side::kSell:
      return "SELL";
    case Side::kBaseline:
      return "TWAP";
  }
  return "BUY";
}

std::string min_period_name(std::size_t min_period, std::size_t horizon) {
  if (min_period == 0) {
    return "all";
  }
  if (min_period == horizon + 1) {
    return "match";
  }
  return std::to_string(min_period);
}

const ScenarioSamples& EvaluationResult::at(const ScenarioKey& key) const {
  for (const auto& s : scenarios) {
    if (s.key == key) {
      return s;
    }
  }
  throw std::out_of_range("unknown scenario");
}

EvaluationResult make_result(std::size_t horizon) {
  EvaluationResult r;
  r.horizon = horizon;
  r.scenarios.push_back({{Side::kBaseline, true, true, 0}, {}, {}, {}});
  r.scenarios.push_back({{Side::kBaseline, true, false, 0}, {}, {}, {}});
  for (std::size_t n = 0; n <= horizon; ++n) {
    for (std::size_t k = 0; k < kStrategies; ++k) {
      for (std::size_t a = 0; a < kAllocTypes; ++a) {
        ScenarioKey key;
        key.side = decision::is_buy(k) ? Side::kBuy : Side::kSell;
        key.vwap = decision::is_vwap(k);
        key.notional = a == decision::kNotional;
        key.min_period = n + 1;
        r.scenarios.push_back({key, {}, {}, {}});
      }
    }
  }
  return r;
}

namespace {

void push_schedule(ScenarioSamples& s, const double* alloc, std::size_t horizon,
                   std::size_t tau) {
  double executed = 0.0;
  for (std::size_t t = 0; t < tau; ++t) {
    executed += alloc[t];
  }
  double cum = 0.0;
  for (std::size_t t = 0; t < horizon; ++t) {
    if (t < tau) {
      cum += alloc[t];
    }
    s.cumulative.push_back(t + 1 >= tau ? 1.0 : (executed > 0.0 ? cum / executed : 0.0));
  }
}

}  // namespace

EvaluationResult evaluate_allocations(const std::vector<double>& alloc,
                                      const std::vector<double>& prices,
                                      const std::vector<double>& volumes, std::size_t windows,
                                      std::size_t horizon) {
  const std::size_t N = horizon;
  const std::size_t M = (N + 1) * kStrategies * kAllocTypes;
  if (alloc.size() != windows * N * M || prices.size() != windows * N ||
      volumes.size() != windows * N) {
    throw ShapeError(fmt::format("evaluation inputs: alloc {} / prices {} / volumes {} for {} windows, N={}",
                                 alloc.size(), prices.size(), volumes.size(), windows, N));
  }
  EvaluationResult r = make_result(N);
  for (auto& s : r.scenarios) {
    s.slippage_bps.reserve(windows);
    s.stop_step.reserve(windows);
    s.cumulative.reserve(windows * N);
  }
  const std::vector<double> uniform(N, 1.0 / static_cast<double>(N));
  std::vector<double> path(N);
  for (std::size_t w = 0; w < windows; ++w) {
    const double* p = prices.data() + w * N;
    const double* v = volumes.data() + w * N;
    for (std::size_t i = 0; i < 2; ++i) {
      auto& s = r.scenarios[i];
      const auto h = objective::hard_execution(uniform.data(), p, v, N, N, true, s.key.notional);
      s.slippage_bps.push_back(h.slippage_bps);
      s.stop_step.push_back(h.stop_step);
      push_schedule(s, uniform.data(), N, h.stop_step);
    }
    for (std::size_t m = 0; m < M; ++m) {
      for (std::size_t t = 0; t < N; ++t) {
        path[t] = alloc[(w * N + t) * M + m];
      }
      auto& s = r.scenarios[2 + m];
      const auto h = objective::hard_execution(path.data(), p, v, N, s.key.min_period,
                                               s.key.vwap, s.key.notional);
      s.slippage_bps.push_back(h.slippage_bps);
      s.stop_step.push_back(h.stop_step);
      push_schedule(s, path.data(), N, h.stop_step);
    }
  }
  r.start_ts.assign(windows, 0);
  r.asset_ids.assign(windows, "");
  return r;
}

template <typename T>
EvaluationResult evaluate_model(const model::LemModel<T>& m, const data::WindowSet& set,
                                std::size_t batch_size) {
  const auto& mc = m.config();
  if (set.steps != mc.total_steps() || set.channels != mc.channels || set.horizon != mc.horizon) {
    throw ShapeError(fmt::format(
        "model expects windows [T={}, D={}, N={}] but the dataset has [T={}, D={}, N={}]",
        mc.total_steps(), mc.channels, mc.horizon, set.steps, set.channels, set.horizon));
  }
  const std::size_t N = mc.horizon;
  const std::size_t per_window = N * mc.decision.paths();
  std::vector<double> alloc(set.size() * per_window);
  const std::size_t batches = (set.size() + batch_size - 1) / batch_size;
  parallel_for(batches, [&](std::size_t first, std::size_t last) {
    ad::NoGradGuard no_grad;
    for (std::size_t b = first; b < last; ++b) {
      const std::size_t begin = b * batch_size;
      const std::size_t end = std::min(set.size(), begin + batch_size);
      auto batch = model::make_batch<T>(set, begin, end);
      auto a = m.allocate(batch.features);
      const auto d = a.data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        alloc[begin * per_window + i] = static_cast<double>(d[i]);
      }
    }
  });
  auto r = evaluate_allocations(alloc, set.target_prices, set.target_volumes, set.size(), N);
  r.start_ts = set.start_ts;
  r.asset_ids = set.asset_ids;
  return r;
}

void write_samples(const EvaluationResult& r, const std::filesystem::path& path) {
  auto out = fmt::output_file(path.string());
  const std::size_t N = r.horizon;
  out.print(
      "window,start_ts,asset_id,side,benchmark,allocation,min_period,stop_step,slippage_bps,"
      "cumulative_{}\n",
      N);
  for (const auto& s : r.scenarios) {
    for (std::size_t w = 0; w < s.slippage_bps.size(); ++w) {
      std::string cum;
      for (std::size_t t = 0; t < N; ++t) {
        cum += fmt::format("{}{:.17g}", t ? ";" : "", s.cumulative[w * N + t]);
      }
      out.print("{},{},{},{},{},{},{},{},{:.17g},{}\n", w, r.start_ts.at(w), r.asset_ids.at(w),
                side_name(s.key.side), s.key.vwap ? "VWAP" : "TWAP",
                s.key.notional ? "notional" : "volume", min_period_name(s.key.min_period, N),
                s.stop_step[w], s.slippage_bps[w], cum);
    }
  }
}

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) {
    out.push_back(field);
  }
  if (!line.empty() && line.back() == sep) {
    out.emplace_back();
  }
  return out;
}

double to_double(const std::string& s, std::size_t line_no, const std::string& source) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ParseError(source, line_no, fmt::format("bad number '{}'", s));
  }
  return v;
}

}  // namespace

EvaluationResult read_samples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError(fmt::format("cannot open evaluation samples {}", path.string()));
  }
  const std::string source = path.string();
  std::string line;
  std::getline(in, line);
  const auto tag = line.rfind("cumulative_");
  if (tag == std::string::npos) {
    throw ParseError(source, 1, "missing cumulative_<N> column");
  }
  const std::size_t horizon = std::stoul(line.substr(tag + 11));
  if (horizon < 2) {
    throw ParseError(source, 1, "horizon must be >= 2");
  }
  struct Row {
    std::size_t window;
    std::int64_t ts;
    std::string asset;
    ScenarioKey key;
    std::string min_period;
    std::size_t stop;
    double slip;
    std::vector<double> cum;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    auto f = split(line, ',');
    if (f.size() != 10) {
      throw ParseError(source, line_no, "expected 10 fields");
    }
    Row row;
    row.window = static_cast<std::size_t>(to_double(f[0], line_no, source));
    row.ts = static_cast<std::int64_t>(std::stoll(f[1]));
    row.asset = f[2];
    row.key.side = f[3] == "BUY" ? Side::kBuy : (f[3] == "SELL" ? Side::kSell : Side::kBaseline);
    row.key.vwap = f[4] == "VWAP";
    row.key.notional = f[5] == "notional";
    row.min_period = f[6];
    row.stop = static_cast<std::size_t>(to_double(f[7], line_no, source));
    row.slip = to_double(f[8], line_no, source);
    for (const auto& c : split(f[9], ';')) {
      row.cum.push_back(to_double(c, line_no, source));
    }
    if (row.cum.size() != horizon) {
      throw ParseError(source, line_no, "inconsistent horizon");
    }
    rows.push_back(std::move(row));
  }
  EvaluationResult r = make_result(horizon);
  std::size_t windows = 0;
  for (auto& row : rows) {
    if (row.min_period == "all") {
      row.key.min_period = 0;
    } else if (row.min_period == "match") {
      row.key.min_period = horizon + 1;
    } else {
      row.key.min_period = static_cast<std::size_t>(std::stoul(row.min_period));
    }
    windows = std::max(windows, row.window + 1);
  }
  r.start_ts.assign(windows, 0);
  r.asset_ids.assign(windows, "");
  for (auto& s : r.scenarios) {
    s.slippage_bps.assign(windows, 0.0);
    s.stop_step.assign(windows, 0);
    s.cumulative.assign(windows * horizon, 0.0);
  }
  for (const auto& row : rows) {
    auto it = std::find_if(r.scenarios.begin(), r.scenarios.end(),
                           [&](const ScenarioSamples& s) { return s.key == row.key; });
    if (it == r.scenarios.end()) {
      throw ValidationError(fmt::format("{}: unknown scenario in samples", source));
    }
    r.start_ts[row.window] = row.ts;
    r.asset_ids[row.window] = row.asset;
    it->slippage_bps[row.window] = row.slip;
    it->stop_step[row.window] = row.stop;
    std::copy(row.cum.begin(), row.cum.end(),
              it->cumulative.begin() + static_cast<std::ptrdiff_t>(row.window * horizon));
  }
  return r;
}

template EvaluationResult evaluate_model<float>(const model::LemModel<float>&,
                                                const data::WindowSet&, std::size_t);
template EvaluationResult evaluate_model<double>(const model::LemModel<double>&,
                                                 const data::WindowSet&, std::size_t);

}  // namespace lem::eval
