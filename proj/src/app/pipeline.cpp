// SPDX-License-Identifier: Apache-2.0

#include "lem/app/pipeline.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>
#include <fmt/os.h>

#include "lem/data/dataset.hpp"
#include "lem/eval/reports.hpp"
#include "lem/util/errors.hpp"
#include "lem/util/rng.hpp"

namespace lem::app {

namespace {

void write_json(const nlohmann::json& j, const fs::path& path) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  out << j.dump(2) << '\n';
  if (!out) {
    throw std::runtime_error(fmt::format("failed writing {}", path.string()));
  }
}

void check_model_shape(const model::ModelConfig& got, const AppConfig& cfg, const char* what) {
  const auto& want = cfg.model;
  if (got.lookback != want.lookback || got.horizon != want.horizon ||
      got.channels != want.channels) {
    throw ShapeError(fmt::format("{} has L={} N={} D={} but the config expects L={} N={} D={}",
                                 what, got.lookback, got.horizon, got.channels, want.lookback,
                                 want.horizon, want.channels));
  }
}

template <typename T>
train::TrainReport train_as(const AppConfig& cfg, const data::WindowSet& tr,
                            const data::WindowSet& va, std::ostream& log) {
  model::LemModel<T> m(cfg.model, cfg.seed);
  const auto log_path = cfg.train_log_path();
  fs::create_directories(log_path.parent_path());
  auto csv = fmt::output_file(log_path.string());
  csv.print("epoch,train_loss,val_loss,lr\n");
  auto report = train::train(m, tr, va, cfg.train, [&](const train::EpochRecord& r) {
    const auto line = fmt::format("{},{:.9g},{:.9g},{:.6g}", r.epoch, r.train_loss, r.val_loss, r.lr);
    csv.print("{}\n", line);
    csv.flush();
    log << line << '\n';
  });
  csv.close();
  save_checkpoint(m, cfg.checkpoint_path());
  report.checkpoint = cfg.checkpoint_path().string();
  return report;
}

template <typename T>
eval::EvaluationResult evaluate_as(const model::Checkpoint& ck, const data::WindowSet& set,
                                   std::size_t batch_size) {
  auto m = model::load_model<T>(ck);
  return eval::evaluate_model(*m, set, batch_size);
}

}  // namespace

std::vector<fs::path> run_synth(const AppConfig& cfg) {
  const auto& s = cfg.synth;
  const auto regime = data::parse_regime(s.regime);
  fs::create_directories(cfg.output_dir);
  const auto manifest_path = cfg.manifest_path();
  data::Manifest manifest;
  std::vector<fs::path> written;
  for (std::size_t a = 0; a < s.assets; ++a) {
    data::SynthOptions opt = s.options;
    opt.asset_id = s.assets == 1 ? std::string("SYN") : fmt::format("SYN{}", a);
    const auto series = data::synth_market(derive_seed(cfg.seed, 100 + a), s.n_bars, regime, opt);
    const fs::path file = cfg.output_dir / fmt::format("candles_{}.csv", opt.asset_id);
    data::save_candles(series, file);
    written.push_back(file);
    data::AssetEntry e;
    e.asset_id = opt.asset_id;
    e.path = fs::absolute(file);
    e.frequency_minutes = opt.frequency_minutes;
    e.frequency_tag = std::min(1.0, opt.frequency_minutes / 1440.0);
    manifest.assets.push_back(e);
  }
  const std::int64_t bar = static_cast<std::int64_t>(s.options.frequency_minutes) * 60;
  auto at_fraction = [&](double f) {
    return s.options.start_ts +
           static_cast<std::int64_t>(std::llround(f * static_cast<double>(s.n_bars))) * bar;
  };
  manifest.val_ts = at_fraction(s.val_fraction);
  manifest.test_ts = at_fraction(s.test_fraction);
  data::save_manifest(manifest, manifest_path);
  written.push_back(manifest_path);
  return written;
}

PrepareSummary run_prepare(const AppConfig& cfg) {
  const auto manifest = data::load_manifest(cfg.manifest_path());
  if (manifest.assets.empty()) {
    throw ValidationError("manifest lists no assets");
  }
  data::WindowSet all = data::make_window_set(cfg.features.total_steps(), data::kFeatureCount,
                                              cfg.features.horizon);
  for (const auto& a : manifest.assets) {
    auto spec = cfg.features;
    spec.frequency_tag = a.frequency_tag;
    const auto candles = data::load_candles(a.path, a.asset_id, a.frequency_minutes);
    all.append(data::build_features(candles, spec));
  }
  auto splits = data::split_dataset(all, manifest.val_ts, manifest.test_ts);
  fs::create_directories(cfg.dataset_path("train").parent_path());
  data::write_windows(splits.train, cfg.dataset_path("train"));
  data::write_windows(splits.validation, cfg.dataset_path("val"));
  data::write_windows(splits.test, cfg.dataset_path("test"));
  return {splits.train.size(), splits.validation.size(), splits.test.size(),
          std::move(splits.warnings)};
}

train::TrainReport run_train(const AppConfig& cfg, std::ostream& log) {
  const auto tr = data::read_windows(cfg.dataset_path("train"));
  const auto va = data::read_windows(cfg.dataset_path("val"));
  auto report = cfg.train.precision == "double" ? train_as<double>(cfg, tr, va, log)
                                                : train_as<float>(cfg, tr, va, log);
  write_json(report.to_json(), cfg.train_report_path());
  return report;
}

eval::EvaluationResult run_evaluate(const AppConfig& cfg) {
  const auto ck = model::read_checkpoint(cfg.eval_checkpoint_path());
  check_model_shape(ck.config, cfg, "checkpoint");
  const auto set = data::read_windows(cfg.dataset_path(cfg.evaluate.split));
  if (set.empty()) {
    throw ValidationError(fmt::format("{} split is empty", cfg.evaluate.split));
  }
  auto result = cfg.train.precision == "double"
                    ? evaluate_as<double>(ck, set, cfg.evaluate.batch_size)
                    : evaluate_as<float>(ck, set, cfg.evaluate.batch_size);
  const auto path = cfg.samples_path();
  fs::create_directories(path.parent_path());
  eval::write_samples(result, path);
  return result;
}

std::vector<fs::path> run_report(const AppConfig& cfg) {
  const auto result = eval::read_samples(cfg.report_samples_path());
  return eval::emit_reports(result, cfg.report_dir());
}

train::GradCheckReport run_gradcheck(const AppConfig& cfg) {
  const auto& g = cfg.gradcheck;
  nlohmann::json mj = to_json(cfg.model);
  mj["lookback"] = g.lookback;
  mj["horizon"] = g.horizon;
  mj["channels"] = g.channels;
  mj["encoder"]["hidden"] = g.hidden;
  mj["encoder"]["heads"] = g.heads;
  mj["encoder"]["dropout"] = 0.0;
  mj["decision"]["return_channel"] = 0;
  mj["decision"]["volume_channel"] = 1;
  const auto mc = model::model_config_from_json(mj);
  model::LemModel<double> m(mc, cfg.seed);

  Rng rng(derive_seed(cfg.seed, 7));
  const std::size_t B = g.batch;
  const std::size_t T = mc.total_steps();
  const std::size_t N = mc.horizon;
  std::vector<double> feats(B * T * mc.channels);
  for (auto& v : feats) {
    v = rng.normal();
  }
  std::vector<double> prices(B * N);
  std::vector<double> volumes(B * N);
  for (std::size_t b = 0; b < B; ++b) {
    double p = 100.0;
    for (std::size_t t = 0; t < N; ++t) {
      p *= std::exp(0.01 * rng.normal());
      prices[b * N + t] = p;
      volumes[b * N + t] = rng.uniform(0.5, 1.5);
    }
  }
  model::Batch<double> batch{
      model::Tensor<double>::constant({B, T, mc.channels}, std::move(feats)),
      model::Tensor<double>::constant({B, N}, std::move(prices)),
      model::Tensor<double>::constant({B, N}, std::move(volumes))};

  train::GradCheckOptions opt;
  opt.step = g.step;
  opt.tolerance = g.tolerance;
  opt.sample_fraction = g.sample_fraction;
  opt.seed = derive_seed(cfg.seed, 8);
  auto report = train::grad_check(m, batch, opt);
  write_json(report.to_json(), cfg.output_dir / "gradcheck.json");
  return report;
}

}  // namespace lem::app
