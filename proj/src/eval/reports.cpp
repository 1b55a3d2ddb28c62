// SPDX-License-Identifier: Apache-2.0

#include "lem/eval/reports.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>
#include <fmt/os.h>

#include "lem/eval/stats.hpp"

namespace lem::eval {

namespace fs = std::filesystem;

namespace {

constexpr const char* kStatsHeader = "count,mean,std,median,p5,p95,q25,q75";

std::string stats_cells(const Summary& s) {
  return fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}", s.count, s.mean, s.std,
                     s.median, s.p5, s.p95, s.q25, s.q75);
}

std::string strategy_label(const ScenarioKey& k) {
  return fmt::format("{}-{}", k.vwap ? "VWAP" : "TWAP", k.notional ? "notional" : "vol");
}

std::string scenario_cells(const ScenarioKey& k, std::size_t horizon) {
  return fmt::format("{},{},{},{}", side_name(k.side), k.vwap ? "VWAP" : "TWAP",
                     k.notional ? "notional" : "volume", min_period_name(k.min_period, horizon));
}

const ScenarioSamples* find(const EvaluationResult& r, const ScenarioKey& key) {
  for (const auto& s : r.scenarios) {
    if (s.key == key) {
      return &s;
    }
  }
  return nullptr;
}

void by_min_period(const EvaluationResult& r, const fs::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("order_type,strategy,min_period,{}\n", kStatsHeader);
  const std::size_t N = r.horizon;
  auto row = [&](const std::string& order_type, const ScenarioKey& key) {
    const auto* s = find(r, key);
    if (s == nullptr || s->slippage_bps.empty()) {
      return;
    }
    out.print("{},{},{},{}\n", order_type, strategy_label(key),
              key.min_period == N + 1 ? "Match VWAP" : min_period_name(key.min_period, N),
              stats_cells(summarize(s->slippage_bps)));
  };
  row("TWAP Notional", {Side::kBaseline, true, true, 0});
  row("TWAP Volume", {Side::kBaseline, true, false, 0});
  for (Side side : {Side::kBuy, Side::kSell}) {
    for (std::size_t n = 1; n <= N + 1; ++n) {
      row(side_name(side), {side, true, false, n});
    }
  }
}

void detailed(const EvaluationResult& r, std::size_t min_period, const fs::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("order_type,comparison,{}\n", kStatsHeader);
  struct Variant {
    const char* label;
    bool vwap;
    bool notional;
  };
  const Variant variants[] = {{"TWAP Volume vs TWAP", false, false},
                              {"TWAP Notional vs TWAP", false, true},
                              {"VWAP Volume vs VWAP", true, false},
                              {"VWAP Notional vs VWAP", true, true}};
  for (Side side : {Side::kBuy, Side::kSell}) {
    for (const auto& v : variants) {
      const auto* s = find(r, {side, v.vwap, v.notional, min_period});
      if (s == nullptr || s->slippage_bps.empty()) {
        continue;
      }
      out.print("{},{},{}\n", side_name(side), v.label, stats_cells(summarize(s->slippage_bps)));
    }
  }
}

void curves(const EvaluationResult& r, const fs::path& path) {
  auto out = fmt::output_file(path.string());
  out.print("side,benchmark,allocation,min_period,step,mean");
  for (int q = 1; q <= 9; ++q) {
    out.print(",q{}", q * 10);
  }
  out.print("\n");
  const std::size_t N = r.horizon;
  std::vector<double> column;
  for (const auto& s : r.scenarios) {
    const std::size_t W = s.slippage_bps.size();
    if (W == 0) {
      continue;
    }
    for (std::size_t t = 0; t < N; ++t) {
      column.clear();
      double total = 0.0;
      for (std::size_t w = 0; w < W; ++w) {
        const double v = s.cumulative[w * N + t];
        column.push_back(v);
        total += v;
      }
      std::sort(column.begin(), column.end());
      out.print("{},{},{:.6f}", scenario_cells(s.key, N), t + 1, total / static_cast<double>(W));
      for (int q = 1; q <= 9; ++q) {
        out.print(",{:.6f}", percentile_sorted(column, q / 10.0));
      }
      out.print("\n");
    }
  }
}

void histograms(const EvaluationResult& r, const fs::path& path, const fs::path& clip_path) {
  auto out = fmt::output_file(path.string());
  auto clip = fmt::output_file(clip_path.string());
  out.print("side,benchmark,allocation,min_period,bin_lo,bin_hi,density\n");
  clip.print("side,benchmark,allocation,min_period,count,below_range,above_range\n");
  const auto bins = static_cast<std::size_t>(kHistogramHi - kHistogramLo);
  std::vector<std::size_t> counts(bins);
  for (const auto& s : r.scenarios) {
    const std::size_t W = s.slippage_bps.size();
    if (W == 0) {
      continue;
    }
    std::fill(counts.begin(), counts.end(), 0);
    std::size_t below = 0;
    std::size_t above = 0;
    for (double v : s.slippage_bps) {
      std::size_t b = 0;
      if (v < kHistogramLo) {
        ++below;
        b = 0;
      } else if (v >= kHistogramHi) {
        ++above;
        b = bins - 1;
      } else {
        b = std::min(bins - 1, static_cast<std::size_t>(std::floor(v - kHistogramLo)));
      }
      ++counts[b];
    }
    const std::string cells = scenario_cells(s.key, r.horizon);
    for (std::size_t b = 0; b < bins; ++b) {
      if (counts[b] == 0) {
        continue;
      }
      const double lo = kHistogramLo + static_cast<double>(b);
      out.print("{},{:.0f},{:.0f},{:.9f}\n", cells, lo, lo + 1.0,
                static_cast<double>(counts[b]) / static_cast<double>(W));
    }
    clip.print("{},{},{},{}\n", cells, W, below, above);
  }
}

}  // namespace

std::vector<fs::path> emit_reports(const EvaluationResult& r, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  written.push_back(out_dir / "slippage_by_min_period.csv");
  by_min_period(r, written.back());
  for (std::size_t p = 1; p <= r.horizon + 1; ++p) {
    const std::string tag = p == r.horizon + 1 ? "match" : std::to_string(p);
    written.push_back(out_dir / fmt::format("slippage_detailed_min_{}.csv", tag));
    detailed(r, p, written.back());
  }
  written.push_back(out_dir / "execution_curves.csv");
  curves(r, written.back());
  written.push_back(out_dir / "slippage_histograms.csv");
  written.push_back(out_dir / "slippage_histogram_clipping.csv");
  histograms(r, written[written.size() - 2], written.back());
  return written;
}

}  // namespace lem::eval
