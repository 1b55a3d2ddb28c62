// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "lem/data/dataset.hpp"
#include "lem/eval/evaluator.hpp"
#include "lem/eval/reports.hpp"
#include "lem/eval/stats.hpp"
#include "support/reference.hpp"
#include "support/test_util.hpp"

namespace {

using namespace lem;
using namespace lem::eval;
using Vec = std::vector<double>;
namespace fs = std::filesystem;

TEST(Stats, PercentilesAndStdAgainstNumpy) {
  const Vec x{4.2, -1.0, 3.3, 0.0, 7.5, 2.2, 9.1, -3.3, 5.5, 1.1, 0.7};
  const auto s = summarize(x);
  EXPECT_EQ(s.count, 11u);
  EXPECT_NEAR(s.mean, 29.3 / 11.0, 1e-12);
  EXPECT_NEAR(s.std, 3.7178684019940045, 1e-12);
  EXPECT_NEAR(s.p5, -2.15, 1e-12);
  EXPECT_NEAR(s.q25, 0.35, 1e-12);
  EXPECT_NEAR(s.median, 2.2, 1e-12);
  EXPECT_NEAR(s.q75, 4.85, 1e-12);
  EXPECT_NEAR(s.p95, 8.3, 1e-12);
}

TEST(Stats, PercentileHandValuesAndSortedOracle) {
  EXPECT_DOUBLE_EQ(percentile_sorted({1, 2, 3, 4}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(percentile_sorted({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(percentile_sorted({7}, 0.9), 7.0);
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    Vec v(1 + rng.below(40));
    for (auto& a : v) {
      a = rng.normal();
    }
    Vec sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const auto s = summarize(v);
    EXPECT_EQ(s.median, percentile_sorted(sorted, 0.5));
    EXPECT_LE(s.p5, s.q25);
    EXPECT_LE(s.q25, s.median);
    EXPECT_LE(s.median, s.q75);
    EXPECT_LE(s.q75, s.p95);
    EXPECT_GE(s.p5, sorted.front());
    EXPECT_LE(s.p95, sorted.back());
  }
  EXPECT_EQ(summarize({}).count, 0u);
  EXPECT_EQ(summarize({3.0}).std, 0.0);
}

TEST(Stats, PairedTTestAgainstScipy) {
  const Vec a{3.1, 0.4, 2.2, 5.0, -1.3, 2.8, 0.9};
  const Vec b{1.0, 0.8, 1.1, 2.2, -0.5, 1.0, 1.4};
  const auto t = paired_t_test(a, b);
  EXPECT_EQ(t.n, 7u);
  EXPECT_NEAR(t.t, 1.6015703461070363, 1e-12);
  EXPECT_NEAR(t.p_less, 0.9198150981657385, 1e-10);
  EXPECT_NEAR(t.p_greater, 0.08018490183426152, 1e-10);
  EXPECT_THROW(paired_t_test({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST(Stats, PairedTTestClosedFormFourDegrees) {
  // d = 1..5: t = 3 / (sqrt(2.5) / sqrt(5)); with 4 degrees of freedom
  // F(t) = 1/2 + sin(th) (1 + cos^2(th) / 2) / 2, th = atan(t / 2).
  const auto r = paired_t_test({1, 2, 3, 4, 5}, {0, 0, 0, 0, 0});
  const double t = 3.0 / std::sqrt(2.5 / 5.0);
  const double th = std::atan(t / 2.0);
  const double cdf = 0.5 + 0.5 * std::sin(th) * (1.0 + std::cos(th) * std::cos(th) / 2.0);
  EXPECT_NEAR(r.t, t, 1e-12);
  EXPECT_NEAR(r.p_greater, 1.0 - cdf, 1e-12);
  EXPECT_NEAR(r.p_less, cdf, 1e-12);
}

std::size_t path_offset(std::size_t N, std::size_t n, std::size_t k, std::size_t a) {
  return ((n - 1) * 4 + k) * 2 + a;
}

TEST(Evaluator, ScenarioGrid) {
  const auto r = make_result(3);
  ASSERT_EQ(r.scenarios.size(), 2u + 4 * 4 * 2);
  EXPECT_EQ(r.scenarios[0].key, (ScenarioKey{Side::kBaseline, true, true, 0}));
  EXPECT_EQ(r.scenarios[1].key, (ScenarioKey{Side::kBaseline, true, false, 0}));
  EXPECT_EQ(r.scenarios[2].key, (ScenarioKey{Side::kBuy, true, false, 1}));
  EXPECT_EQ(r.scenarios.back().key, (ScenarioKey{Side::kSell, false, true, 4}));
  EXPECT_EQ(min_period_name(4, 3), "match");
  EXPECT_EQ(min_period_name(0, 3), "all");
  EXPECT_EQ(min_period_name(2, 3), "2");
}

TEST(Evaluator, HandExampleAndTwapMatch) {
  const std::size_t N = 2, M = (N + 1) * 8;
  Vec alloc(N * M, 0.5);
  const std::size_t m = path_offset(N, 2, 1, 0);  // BUY TWAP volume, min period 2
  alloc[0 * M + m] = 1.0;
  alloc[1 * M + m] = 0.0;
  const auto r = evaluate_allocations(alloc, {80.0, 100.0}, {1.0, 3.0}, 1, N);
  const auto& s = r.at({Side::kBuy, false, false, 2});
  EXPECT_NEAR(s.slippage_bps[0], -1111.111111111111, 1e-9);
  EXPECT_EQ(s.stop_step[0], 2u);
  // Even volume split over the full horizon against TWAP.
  EXPECT_NEAR(r.at({Side::kSell, false, false, 3}).slippage_bps[0], 0.0, 1e-12);
  // Baseline: even split against VWAP 95.
  EXPECT_NEAR(r.at({Side::kBaseline, true, false, 0}).slippage_bps[0], (90.0 / 95.0 - 1) * 1e4,
              1e-9);
  const auto& cum = r.at({Side::kBuy, false, false, 1}).cumulative;
  EXPECT_DOUBLE_EQ(cum[0], 0.5);
  EXPECT_DOUBLE_EQ(cum[1], 1.0);
}

TEST(Evaluator, ConstantPriceGivesZeroSlippage) {
  const auto f = lem::testing::golden_fixture(5, 8, 5);
  Vec prices(f.prices.size(), 12.5);
  const auto r = evaluate_allocations(f.alloc, prices, f.volumes, f.windows, f.horizon);
  for (const auto& s : r.scenarios) {
    for (double v : s.slippage_bps) {
      EXPECT_NEAR(v, 0.0, 1e-9);
    }
  }
}

TEST(Evaluator, MatchesReferenceEvaluator) {
  const auto f = lem::testing::golden_fixture(77, 30, 5);
  const auto r = evaluate_allocations(f.alloc, f.prices, f.volumes, f.windows, f.horizon);
  const auto ref = lem::testing::reference_evaluate(f.alloc, f.prices, f.volumes, f.windows, f.horizon);
  ASSERT_EQ(r.scenarios.size(), ref.scenarios.size());
  for (std::size_t i = 0; i < ref.scenarios.size(); ++i) {
    const auto& a = r.scenarios[i];
    const auto& b = ref.scenarios[i];
    EXPECT_EQ(a.key.min_period, b.min_period_value);
    for (std::size_t w = 0; w < f.windows; ++w) {
      EXPECT_NEAR(a.slippage_bps[w], b.slippage_bps[w], 1e-9);
      for (std::size_t t = 0; t < f.horizon; ++t) {
        EXPECT_NEAR(a.cumulative[w * f.horizon + t], b.cumulative[w][t], 1e-12);
      }
    }
  }
}

TEST(Evaluator, FrozenModelMatchesReference) {
  model::ModelConfig mc;
  mc.lookback = 8;
  mc.horizon = 4;
  mc.encoder.hidden = 4;
  mc.encoder.heads = 2;
  mc.decision.mlp_width = 6;
  mc.finalize();
  model::LemModel<double> m(mc, 31);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    Rng rng(100 + i);
    for (auto& v : m.params().tensor(i).mutable_data()) {
      v += rng.uniform(-0.5, 0.5);
    }
  }
  data::FeatureSpec spec;
  spec.lookback = 8;
  spec.horizon = 4;
  spec.normalization_window = 32;
  const auto windows =
      data::build_features(data::synth_market(32, 160, data::Regime::kTrending), spec);
  ASSERT_GT(windows.size(), 50u);
  const auto r = evaluate_model(m, windows, 16);
  Vec alloc;
  {
    ad::NoGradGuard ng;
    const auto batch = model::make_batch<double>(windows, 0, windows.size());
    const auto a = m.allocate(batch.features);
    alloc.assign(a.data().begin(), a.data().end());
  }
  const auto ref = lem::testing::reference_evaluate(alloc, windows.target_prices,
                                                    windows.target_volumes, windows.size(), 4);
  ASSERT_EQ(r.windows(), windows.size());
  EXPECT_EQ(r.start_ts, windows.start_ts);
  for (std::size_t i = 0; i < ref.scenarios.size(); ++i) {
    for (std::size_t w = 0; w < windows.size(); ++w) {
      EXPECT_NEAR(r.scenarios[i].slippage_bps[w], ref.scenarios[i].slippage_bps[w], 1e-9);
    }
  }
}

std::map<std::string, std::string> read_dir(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    out[e.path().filename().string()] = lem::testing::read_text(e.path());
  }
  return out;
}

TEST(Reports, GoldenFilesAreByteIdentical) {
  const auto f = lem::testing::golden_fixture();
  const auto r = evaluate_allocations(f.alloc, f.prices, f.volumes, f.windows, f.horizon);
  const auto dir = lem::testing::scratch_dir("golden");
  const auto written = emit_reports(r, dir);
  const auto golden = read_dir(LEM_GOLDEN_DIR);
  const auto ours = read_dir(dir);
  ASSERT_EQ(golden.size(), 9u);
  ASSERT_EQ(written.size(), golden.size());
  for (const auto& [name, text] : golden) {
    ASSERT_TRUE(ours.count(name)) << name;
    EXPECT_EQ(ours.at(name), text) << name;
  }
}

TEST(Reports, SamplesRoundTripPreservesReports) {
  const auto f = lem::testing::golden_fixture(9, 12, 3);
  EvaluationResult r = evaluate_allocations(f.alloc, f.prices, f.volumes, f.windows, f.horizon);
  for (std::size_t w = 0; w < r.windows(); ++w) {
    r.start_ts[w] = 1600000000 + static_cast<std::int64_t>(w) * 900;
    r.asset_ids[w] = w % 2 ? "AAA" : "BBB";
  }
  const auto dir = lem::testing::scratch_dir("roundtrip");
  write_samples(r, dir / "samples.csv");
  const auto back = read_samples(dir / "samples.csv");
  EXPECT_EQ(back.horizon, 3u);
  EXPECT_EQ(back.start_ts, r.start_ts);
  EXPECT_EQ(back.asset_ids, r.asset_ids);
  emit_reports(r, dir / "direct");
  emit_reports(back, dir / "reloaded");
  EXPECT_EQ(read_dir(dir / "direct"), read_dir(dir / "reloaded"));
  const auto header = lem::testing::read_text(dir / "samples.csv").substr(0, 120);
  EXPECT_EQ(header.rfind("window,start_ts,asset_id,side,benchmark,allocation,min_period,stop_step,"
                         "slippage_bps,cumulative_3\n",
                         0),
            0u);
}

TEST(Reports, EmptyResultWritesHeadersOnly) {
  const auto dir = lem::testing::scratch_dir("empty");
  emit_reports(make_result(3), dir);
  const auto files = read_dir(dir);
  EXPECT_EQ(files.size(), 8u);
  for (const auto& [name, text] : files) {
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1) << name;
  }
}

TEST(Reports, HistogramMassSumsToOne) {
  auto f = lem::testing::golden_fixture(3, 40, 4);
  for (std::size_t i = 0; i < f.prices.size(); i += 7) {
    f.prices[i] *= 1.2;  // push some slippage out of range
  }
  const auto r = evaluate_allocations(f.alloc, f.prices, f.volumes, f.windows, f.horizon);
  const auto dir = lem::testing::scratch_dir("hist");
  emit_reports(r, dir);
  std::istringstream in(lem::testing::read_text(dir / "slippage_histograms.csv"));
  std::string line;
  std::getline(in, line);
  std::map<std::string, double> mass;
  while (std::getline(in, line)) {
    const auto cut = line.rfind(',');
    std::string key = line.substr(0, cut);
    key = key.substr(0, key.rfind(','));
    key = key.substr(0, key.rfind(','));
    mass[key] += std::stod(line.substr(cut + 1));
  }
  EXPECT_EQ(mass.size(), r.scenarios.size());
  for (const auto& [key, total] : mass) {
    EXPECT_NEAR(total, 1.0, 1e-7) << key;
  }
  const auto clip = lem::testing::read_text(dir / "slippage_histogram_clipping.csv");
  EXPECT_NE(clip.find(",40,"), std::string::npos);
}

}  // namespace
