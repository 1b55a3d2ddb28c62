// SPDX-License-Identifier: Apache-2.0
//
// Acceptance runner: one PASS/FAIL line per criterion. Optional arguments
// select criteria by number, e.g. `lem_acceptance 1 3`.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "lem/app/pipeline.hpp"
#include "lem/eval/reports.hpp"
#include "lem/eval/stats.hpp"
#include "lem/objective/loss.hpp"
#include "lem/train/grad_check.hpp"
#include "support/oracles.hpp"
#include "support/reference.hpp"

namespace {

using namespace lem;
namespace fs = std::filesystem;
using Vec = std::vector<double>;
using TensorD = ad::Tensor<double>;

struct Outcome {
  bool passed{false};
  std::string detail;
};

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("lem_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

model::ModelConfig small_model(std::size_t L, std::size_t N, std::size_t H, std::size_t D) {
  model::ModelConfig mc;
  mc.lookback = L;
  mc.horizon = N;
  mc.channels = D;
  mc.encoder.hidden = H;
  mc.encoder.heads = 2;
  mc.decision.return_channel = 0;
  mc.decision.volume_channel = 1;
  mc.finalize();
  return mc;
}

void scramble(model::LemModel<double>& m, Rng& rng) {
  const double scale = std::array<double, 3>{0.1, 1.0, 3.0}[rng.below(3)];
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    for (auto& v : m.params().tensor(i).mutable_data()) {
      v = rng.uniform(-scale, scale);
    }
  }
}

TensorD random_features(Rng& rng, std::size_t B, std::size_t T, std::size_t D) {
  Vec v(B * T * D);
  const double scale = rng.uniform(0.1, 5.0);
  for (auto& x : v) {
    x = scale * rng.normal();
  }
  return TensorD::constant({B, T, D}, v);
}

Outcome conservation() {
  Rng rng(101);
  std::size_t worst_pass = 0;
  double worst = 0.0, min_value = 0.0;
  std::size_t passes = 0;
  for (std::size_t N : {4u, 6u, 12u}) {
    const auto mc = small_model(8, N, 8, data::kFeatureCount);
    model::LemModel<double> m(mc, 7 + N);
    const std::size_t count = N == 12 ? 334 : 333;
    const std::size_t M = mc.decision.paths();
    for (std::size_t p = 0; p < count; ++p, ++passes) {
      scramble(m, rng);
      ad::NoGradGuard ng;
      const auto a = m.allocate(random_features(rng, 4, mc.total_steps(), mc.channels));
      for (std::size_t b = 0; b < 4; ++b) {
        for (std::size_t path = 0; path < M; ++path) {
          double total = 0.0;
          for (std::size_t t = 0; t < N; ++t) {
            const double v = a.at((b * N + t) * M + path);
            min_value = std::min(min_value, v);
            total += v;
          }
          if (std::fabs(total - 1.0) > worst) {
            worst = std::fabs(total - 1.0);
            worst_pass = passes;
          }
        }
      }
    }
  }
  return {worst <= 1e-6 && min_value >= 0.0,
          fmt::format("{} passes, max |sum - 1| = {:.3g} (pass {}), min allocation {:.3g}", passes,
                      worst, worst_pass, min_value)};
}

Outcome causality() {
  Rng rng(202);
  std::size_t failures = 0, checked_steps = 0;
  const std::size_t L = 8, N = 6, H = 8;
  const auto mc = small_model(L, N, H, data::kFeatureCount);
  model::LemModel<double> m(mc, 3);
  const std::size_t T = mc.total_steps(), D = mc.channels, M = mc.decision.paths();
  for (int trial = 0; trial < 200; ++trial) {
    if (trial % 20 == 0) {
      scramble(m, rng);
    }
    ad::NoGradGuard ng;
    const auto x = random_features(rng, 2, T, D);
    const std::size_t cut = rng.below(T - 1);
    Vec v(x.data().begin(), x.data().end());
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t t = cut + 1; t < T; ++t) {
        for (std::size_t d = 0; d < D; ++d) {
          v[(b * T + t) * D + d] = rng.uniform(-10.0, 10.0);
        }
      }
    }
    const auto y = TensorD::constant(x.shape(), v);
    const auto cx = m.context(x), cy = m.context(y);
    for (std::size_t b = 0; b < 2; ++b) {
      for (std::size_t i = 0; i < (cut + 1) * H; ++i) {
        failures += cx.at(b * T * H + i) != cy.at(b * T * H + i);
      }
    }
    const auto ax = m.allocate(x), ay = m.allocate(y);
    for (std::size_t s = 1; s <= N; ++s) {
      // Step s reads position L + s - 1; the final step is the remainder of
      // steps 1..N-1.
      const std::size_t pos = L + std::min(s, N - 1) - 1;
      if (pos > cut) {
        continue;
      }
      ++checked_steps;
      for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t p = 0; p < M; ++p) {
          const std::size_t i = (b * N + s - 1) * M + p;
          failures += ax.at(i) != ay.at(i);
        }
      }
    }
  }
  return {failures == 0 && checked_steps > 0,
          fmt::format("200 trials, {} allocation steps compared, {} mismatches", checked_steps,
                      failures)};
}

struct Instance {
  std::size_t B, N;
  Vec alloc, prices, volumes;
};

Instance random_instance(Rng& rng) {
  Instance in;
  in.B = 1 + rng.below(3);
  in.N = 2 + rng.below(5);
  const std::size_t B = in.B, N = in.N, M = (N + 1) * 8;
  in.alloc.assign(B * N * M, 0.0);
  in.prices.resize(B * N);
  in.volumes.resize(B * N);
  for (std::size_t b = 0; b < B; ++b) {
    double p = std::exp(rng.uniform(-2.0, 8.0));
    for (std::size_t t = 0; t < N; ++t) {
      p *= std::exp(0.02 * rng.normal());
      in.prices[b * N + t] = p;
      in.volumes[b * N + t] = rng.uniform() < 0.2 ? 0.0 : std::exp(rng.uniform(-3.0, 5.0));
    }
    for (std::size_t path = 0; path < M; ++path) {
      const std::size_t last = rng.uniform() < 0.3 ? 1 + rng.below(N) : N;
      Vec w(N, 0.0);
      double total = 0.0;
      for (std::size_t t = 0; t < last; ++t) {
        w[t] = rng.uniform() < 0.15 ? 0.0 : rng.uniform();
        total += w[t];
      }
      if (total == 0.0) {
        w[0] = total = 1.0;
      }
      for (std::size_t t = 0; t < N; ++t) {
        in.alloc[(b * N + t) * M + path] = w[t] / total;
      }
    }
  }
  return in;
}

Outcome oracle_equivalence() {
  Rng rng(303);
  double worst_price = 0.0, worst_diff = 0.0, worst_total = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto in = random_instance(rng);
    const auto out = objective::evaluate_objective(
        TensorD::constant({in.B, in.N, in.N + 1, 4, 2}, in.alloc),
        TensorD::constant({in.B, in.N}, in.prices), TensorD::constant({in.B, in.N}, in.volumes),
        objective::ObjectiveConfig{});
    const auto o = testing::objective_oracle(in.alloc, in.prices, in.volumes, in.B, in.N);
    for (std::size_t i = 0; i < o.diff.size(); ++i) {
      worst_price = std::max(worst_price, std::fabs(out.achieved.at(i) - o.achieved[i]) /
                                              std::max(1.0, std::fabs(o.achieved[i])));
      worst_price = std::max(worst_price, std::fabs(out.benchmark.at(i) - o.benchmark[i]) /
                                              std::max(1.0, std::fabs(o.benchmark[i])));
      worst_diff = std::max(worst_diff, std::fabs(out.diff.at(i) - o.diff[i]));
    }
    worst_total = std::max(worst_total, std::fabs(out.loss.total.item() - o.total));
  }
  const bool ok = worst_price <= 1e-10 && worst_diff <= 1e-10 && worst_total <= 1e-10;
  return {ok, fmt::format("1000 instances, max price error {:.3g} (relative above 1), "
                          "max D error {:.3g}, max loss error {:.3g}",
                          worst_price, worst_diff, worst_total)};
}

Outcome gradients() {
  std::size_t groups = 0, checked = 0, skipped = 0;
  double worst = 0.0;
  std::string worst_group;
  std::vector<std::string> failing;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto mc = small_model(4, 4, 4, 3);
    model::LemModel<double> m(mc, seed);
    Rng rng(derive_seed(seed, 40));
    const std::size_t B = 2, T = mc.total_steps(), N = 4;
    Vec f(B * T * 3), p(B * N), v(B * N);
    for (auto& x : f) {
      x = rng.normal();
    }
    for (std::size_t b = 0; b < B; ++b) {
      double price = 100.0;
      for (std::size_t t = 0; t < N; ++t) {
        price *= std::exp(0.01 * rng.normal());
        p[b * N + t] = price;
        v[b * N + t] = rng.uniform(0.5, 1.5);
      }
    }
    model::Batch<double> batch{TensorD::constant({B, T, 3}, f), TensorD::constant({B, N}, p),
                               TensorD::constant({B, N}, v)};
    train::GradCheckOptions opt;
    opt.sample_fraction = 0.25;
    opt.seed = derive_seed(seed, 41);
    const auto r = train::grad_check(m, batch, opt);
    for (const auto& g : r.groups) {
      ++groups;
      checked += g.checked;
      skipped += g.skipped_kink;
      if (g.max_rel_error > worst) {
        worst = g.max_rel_error;
        worst_group = g.group;
      }
      if (!g.passed) {
        failing.push_back(fmt::format("{}@{}", g.group, seed));
      }
    }
  }
  return {failing.empty(),
          fmt::format("{} group checks, {} entries, {} kink-adjacent skipped, worst {:.3g} in {}{}",
                      groups, checked, skipped, worst, worst_group,
                      failing.empty() ? "" : ", failing: " + fmt::format("{}", fmt::join(failing, " ")))};
}

Outcome loss_direction() {
  Rng rng(505);
  std::size_t violations = 0, probes = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t B = 1 + rng.below(3), N = 2 + rng.below(6);
    const std::size_t cells = B * 2 * (N + 1) * 4;
    Vec achieved(cells), bench(cells);
    for (std::size_t i = 0; i < cells; ++i) {
      bench[i] = std::exp(rng.uniform(-1.0, 6.0));
      achieved[i] = bench[i] * (1.0 + 0.05 * rng.normal());
    }
    auto loss = [&](const Vec& a) {
      const auto d = objective::performance_diff(TensorD::constant({B, 2, N + 1, 4}, a),
                                                 TensorD::constant({B, 2, N + 1, 4}, bench));
      return objective::total_loss(d).total.item();
    };
    auto cell = [&](std::size_t b, std::size_t a, std::size_t n, std::size_t k) {
      return ((b * 2 + a) * (N + 1) + n) * 4 + k;
    };
    const double base = loss(achieved);
    const std::size_t b = rng.below(B), a = rng.below(2), n = rng.below(N);
    // Buy lower at a flexible index.
    {
      Vec x = achieved;
      x[cell(b, a, n, rng.below(2))] *= 1.0 - rng.uniform(0.0, 0.2);
      violations += loss(x) > base;
      ++probes;
    }
    // Sell higher at a flexible index.
    {
      Vec x = achieved;
      x[cell(b, a, n, 2 + rng.below(2))] *= 1.0 + rng.uniform(0.0, 0.2);
      violations += loss(x) > base;
      ++probes;
    }
    // Pull the match-index deviation towards zero.
    {
      Vec x = achieved;
      const std::size_t i = cell(b, a, N, rng.below(4));
      x[i] = bench[i] + rng.uniform() * (x[i] - bench[i]);
      violations += loss(x) > base;
      ++probes;
    }
  }
  return {violations == 0, fmt::format("{} probes, {} violations", probes, violations)};
}

Outcome twap_match() {
  Rng rng(606);
  double worst = 0.0;
  std::size_t cases = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t N = 2 + rng.below(23);
    Vec prices(N), volumes(N), uniform(N, 1.0 / static_cast<double>(N));
    double p = std::exp(rng.uniform(-5.0, 10.0));
    for (std::size_t t = 0; t < N; ++t) {
      p *= std::exp(0.05 * rng.normal());
      prices[t] = p;
      volumes[t] = rng.uniform() < 0.3 ? 0.0 : std::exp(rng.uniform(-5.0, 5.0));
    }
    const auto h = objective::hard_execution(uniform.data(), prices.data(), volumes.data(), N,
                                             N + 1, false, false);
    worst = std::max(worst, std::fabs(h.slippage_bps));
    ++cases;
  }
  // The same property through the full scenario grid.
  auto f = testing::golden_fixture(66, 50, 6);
  const std::size_t M = 7 * 8;
  for (std::size_t w = 0; w < 50; ++w) {
    for (std::size_t t = 0; t < 6; ++t) {
      for (std::size_t m = 0; m < M; ++m) {
        f.alloc[(w * 6 + t) * M + m] = 1.0 / 6.0;
      }
    }
  }
  const auto r = eval::evaluate_allocations(f.alloc, f.prices, f.volumes, 50, 6);
  for (auto side : {eval::Side::kBuy, eval::Side::kSell}) {
    for (double v : r.at({side, false, false, 7}).slippage_bps) {
      worst = std::max(worst, std::fabs(v));
      ++cases;
    }
  }
  return {worst <= 1e-6, fmt::format("{} fixtures, max |slippage| {:.3g} bps", cases, worst)};
}

struct Directional {
  bool ran{false};
  std::string error;
  eval::EvaluationResult result;
  double train_seconds{0.0};
};

Directional& directional_run() {
  static Directional d;
  if (d.ran) {
    return d;
  }
  d.ran = true;
  try {
    const auto dir = scratch("directional");
    const std::vector<std::string> sets{
        "seed=11",
        "output_dir=" + dir.string(),
        "synth.n_bars=20000",
        "synth.regime=mean_reverting",
        "features.lookback=16",
        "features.horizon=6",
        "features.normalization_window=96",
        "model.encoder.hidden=8",
        "model.encoder.heads=2",
        "train.max_epochs=8",
        "train.learning_rate=0.001",
        "train.batch_size=64"};
    const auto cfg = app::load_config(std::nullopt, sets, std::nullopt);
    app::run_synth(cfg);
    app::run_prepare(cfg);
    std::ostringstream log;
    const auto start = std::chrono::steady_clock::now();
    app::run_train(cfg, log);
    d.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    d.result = app::run_evaluate(cfg);
  } catch (const std::exception& e) {
    d.error = e.what();
  }
  return d;
}

Outcome directional_learning() {
  const auto& d = directional_run();
  if (!d.error.empty()) {
    return {false, "run failed: " + d.error};
  }
  const auto& r = d.result;
  const std::size_t N = r.horizon;
  const auto& base = r.at({eval::Side::kBaseline, true, false, 0}).slippage_bps;
  const auto& buy = r.at({eval::Side::kBuy, true, false, 3}).slippage_bps;
  const auto& sell = r.at({eval::Side::kSell, true, false, 3}).slippage_bps;
  // Windows start one bar apart; every N-th window gives non-overlapping
  // execution horizons.
  Vec b0, b1, s1;
  for (std::size_t w = 0; w < r.windows(); w += N) {
    b0.push_back(base[w]);
    b1.push_back(buy[w]);
    s1.push_back(sell[w]);
  }
  const auto tb = eval::paired_t_test(b1, b0);
  const auto ts = eval::paired_t_test(s1, b0);
  const double mb = eval::summarize(b1).mean, ms = eval::summarize(s1).mean;
  const bool ok = mb < 0.0 && ms > 0.0 && tb.p_less < 0.05 && ts.p_greater < 0.05;
  return {ok, fmt::format("{} test windows, {} non-overlapping; min period 3 BUY mean {:+.3f} bps "
                          "(p={:.3g}), SELL mean {:+.3f} bps (p={:.3g}); training {:.0f} s",
                          r.windows(), b0.size(), mb, tb.p_less, ms, ts.p_greater,
                          d.train_seconds)};
}

Outcome risk_component() {
  const auto& d = directional_run();
  if (!d.error.empty()) {
    return {false, "run failed: " + d.error};
  }
  const auto& r = d.result;
  const std::size_t match = r.horizon + 1;
  const double base = eval::summarize(r.at({eval::Side::kBaseline, true, false, 0}).slippage_bps).std;
  const double buy = eval::summarize(r.at({eval::Side::kBuy, true, false, match}).slippage_bps).std;
  const double sell = eval::summarize(r.at({eval::Side::kSell, true, false, match}).slippage_bps).std;
  return {buy <= base && sell <= base,
          fmt::format("match std BUY {:.3f} / SELL {:.3f} bps vs TWAP-volume baseline {:.3f} bps",
                      buy, sell, base)};
}

std::map<std::string, std::string> read_dir(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    out[e.path().filename().string()] = {std::istreambuf_iterator<char>(in),
                                         std::istreambuf_iterator<char>()};
  }
  return out;
}

Outcome golden_files() {
  const auto f = testing::golden_fixture();
  const auto a = scratch("golden_a");
  const auto b = scratch("golden_b");
  eval::emit_reports(eval::evaluate_allocations(f.alloc, f.prices, f.volumes, f.windows, f.horizon), a);
  eval::emit_reports(eval::evaluate_allocations(f.alloc, f.prices, f.volumes, f.windows, f.horizon), b);
  const auto ra = read_dir(a), rb = read_dir(b), golden = read_dir(LEM_GOLDEN_DIR);
  std::vector<std::string> differing;
  for (const auto& [name, text] : golden) {
    if (!ra.count(name) || ra.at(name) != text) {
      differing.push_back(name);
    }
  }
  const bool ok = ra == rb && differing.empty() && ra.size() == golden.size() && !golden.empty();
  return {ok, fmt::format("{} golden files, {} produced, repeat run identical: {}{}", golden.size(),
                          ra.size(), ra == rb ? "yes" : "no",
                          differing.empty() ? "" : fmt::format(", differing: {}", fmt::join(differing, " ")))};
}

Outcome end_to_end() {
  const auto dir = scratch("smoke");
  std::ofstream(dir / "config.json") << R"({
  "seed": 3,
  "output_dir": ")" << (dir / "out").string() << R"(",
  "synth": {"n_bars": 5000, "regime": "mean_reverting"},
  "features": {"lookback": 16, "horizon": 6, "normalization_window": 96},
  "model": {"encoder": {"hidden": 8, "heads": 2}},
  "train": {"max_epochs": 3, "learning_rate": 0.001, "batch_size": 64}
}
)";
  const auto start = std::chrono::steady_clock::now();
  for (const std::string cmd : {"synth", "prepare", "train", "evaluate", "report"}) {
    const std::string line = fmt::format("\"{}\" {} --config \"{}\" > \"{}\" 2>&1", LEM_CLI_PATH, cmd,
                                         (dir / "config.json").string(),
                                         (dir / (cmd + ".log")).string());
    const int status = std::system(line.c_str());
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (code != 0) {
      return {false, fmt::format("`lem {}` exited with {}", cmd, code)};
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool report = fs::exists(dir / "out" / "report" / "slippage_by_min_period.csv");
  return {report && secs < 600.0,
          fmt::format("all stages exit 0 in {:.1f} s, report written: {}", secs, report ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"conservation", conservation},
      {"causality", causality},
      {"oracle equivalence", oracle_equivalence},
      {"gradient check", gradients},
      {"loss direction", loss_direction},
      {"TWAP match", twap_match},
      {"directional learning", directional_learning},
      {"risk component", risk_component},
      {"report golden files", golden_files},
      {"end-to-end smoke", end_to_end}};
  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) {
    selected.insert(static_cast<std::size_t>(std::stoul(argv[i])));
  }
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.count(i + 1)) {
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << fmt::format("{} criterion {:2d} {}: {} [{:.1f} s]", o.passed ? "PASS" : "FAIL",
                             i + 1, criteria[i].first, o.detail, secs)
              << std::endl;
    failed += !o.passed;
  }
  return failed == 0 ? 0 : 1;
}
