// SPDX-License-Identifier: Apache-2.0
//
// lem: command-line driver for the synth / prepare / train / evaluate /
// report / gradcheck pipeline.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "lem/app/pipeline.hpp"
#include "lem/eval/stats.hpp"
#include "lem/util/errors.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config, "JSON configuration file");
  sub->add_option("--set", args.sets, "override a config value, key.path=value (repeatable)")
      ->take_all();
  sub->add_option("--seed", args.seed, "random seed (overrides the config)");
}

lem::app::AppConfig load(const CommonArgs& a) {
  std::optional<std::filesystem::path> path;
  if (!a.config.empty()) {
    path = a.config;
  }
  return lem::app::load_config(path, a.sets, a.seed);
}

int run(const std::string& cmd, const CommonArgs& args) {
  const auto cfg = load(args);
  if (cmd == "synth") {
    for (const auto& p : lem::app::run_synth(cfg)) {
      fmt::print("wrote {}\n", p.string());
    }
  } else if (cmd == "prepare") {
    const auto s = lem::app::run_prepare(cfg);
    for (const auto& w : s.warnings) {
      fmt::print(stderr, "warning: {}\n", w);
    }
    fmt::print("windows train={} val={} test={}\n", s.train, s.validation, s.test);
  } else if (cmd == "train") {
    const auto r = lem::app::run_train(cfg, std::cout);
    fmt::print("initial val loss {:.9g}, best val loss {:.9g} at epoch {}, stopped at epoch {}\n",
               r.initial_val_loss, r.best_val_loss, r.best_epoch, r.stop_epoch);
    fmt::print("wrote {}\n", r.checkpoint);
  } else if (cmd == "evaluate") {
    const auto r = lem::app::run_evaluate(cfg);
    for (const auto& s : r.scenarios) {
      if (s.key.side == lem::eval::Side::kBaseline ||
          (s.key.vwap && !s.key.notional)) {
        const auto sum = lem::eval::summarize(s.slippage_bps);
        fmt::print("{:<5} {}-{} min_period={:<5} mean={:+.3f} bps std={:.3f}\n",
                   lem::eval::side_name(s.key.side), s.key.vwap ? "VWAP" : "TWAP",
                   s.key.notional ? "notional" : "volume",
                   lem::eval::min_period_name(s.key.min_period, r.horizon), sum.mean, sum.std);
      }
    }
    fmt::print("wrote {}\n", cfg.samples_path().string());
  } else if (cmd == "report") {
    for (const auto& p : lem::app::run_report(cfg)) {
      fmt::print("wrote {}\n", p.string());
    }
  } else if (cmd == "gradcheck") {
    const auto r = lem::app::run_gradcheck(cfg);
    for (const auto& g : r.groups) {
      fmt::print("{:<40} checked={:<4} kink_skipped={:<3} max_rel={:.3e} {}\n", g.group, g.checked,
                 g.skipped_kink, g.max_rel_error, g.passed ? "ok" : "FAIL");
    }
    if (!r.passed) {
      fmt::print(stderr, "gradient check failed for: {}\n", fmt::join(r.failing_groups(), ", "));
      return 1;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learned execution model: data preparation, training and evaluation"};
  app.require_subcommand(1);
  CommonArgs args;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"synth", "generate synthetic candles and a manifest"},
      {"prepare", "build feature windows and date splits"},
      {"train", "train the model"},
      {"evaluate", "score the checkpoint with hard execution"},
      {"report", "write report CSVs from evaluation samples"},
      {"gradcheck", "finite-difference gradient check on a tiny model"}};
  for (const auto& [name, help] : commands) {
    add_common(app.add_subcommand(name, help), args);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return run(cmd, args);
  } catch (const lem::ValidationError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const lem::NonFiniteLoss& e) {
    fmt::print(stderr, "error: non-finite {} term: {}\n", e.term(), e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
}
