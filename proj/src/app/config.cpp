// SPDX-License-Identifier: Apache-2.0

#include "lem/app/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "lem/util/errors.hpp"

namespace lem::app {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& section, const std::set<std::string>& allowed) {
  if (!j.is_object()) {
    throw ValidationError(fmt::format("config section '{}' must be an object", section));
  }
  for (const auto& [k, v] : j.items()) {
    if (allowed.count(k) == 0) {
      throw ValidationError(fmt::format("unknown config key '{}{}'",
                                        section.empty() ? "" : section + ".", k));
    }
  }
}

json section(const json& j, const std::string& name) {
  return j.contains(name) ? j.at(name) : json::object();
}

fs::path path_or(const json& j, const std::string& key) {
  return j.contains(key) ? fs::path(j.at(key).get<std::string>()) : fs::path();
}

}  // namespace

fs::path AppConfig::manifest_path() const {
  return manifest.empty() ? output_dir / "manifest.json" : manifest;
}

fs::path AppConfig::dataset_path(const std::string& split) const {
  const fs::path dir = dataset_dir.empty() ? output_dir / "dataset" : dataset_dir;
  return dir / (split + ".lemw");
}

fs::path AppConfig::checkpoint_path() const {
  return checkpoint.empty() ? output_dir / "model.ckpt" : checkpoint;
}

fs::path AppConfig::eval_checkpoint_path() const {
  return evaluate.checkpoint.empty() ? checkpoint_path() : evaluate.checkpoint;
}

fs::path AppConfig::samples_path() const {
  return evaluate.samples.empty() ? output_dir / "evaluation" / "evaluation_samples.csv"
                                  : evaluate.samples;
}

fs::path AppConfig::report_samples_path() const {
  return report.samples.empty() ? samples_path() : report.samples;
}

fs::path AppConfig::report_dir() const {
  return report.dir.empty() ? output_dir / "report" : report.dir;
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError(fmt::format("override '{}' is not key=value", assignment));
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) {
    value = text;
  }
  json* node = &j;
  std::size_t begin = 0;
  while (true) {
    const auto dot = key.find('.', begin);
    const std::string part = key.substr(begin, dot - begin);
    if (part.empty()) {
      throw ValidationError(fmt::format("override key '{}' has an empty component", key));
    }
    if (!node->is_object()) {
      throw ValidationError(fmt::format("override '{}' descends into a non-object", key));
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) {
      *node = json::object();
    }
    begin = dot + 1;
  }
}

AppConfig config_from_json(const json& j) {
  AppConfig c;
  c.raw = j;
  try {
    check_keys(j, "", {"seed", "output_dir", "synth", "data", "features", "model", "train",
                       "evaluate", "report", "gradcheck"});
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir.string());

    const json s = section(j, "synth");
    check_keys(s, "synth",
               {"regime", "n_bars", "assets", "frequency_minutes", "val_fraction", "test_fraction",
                "start_ts", "start_price", "return_vol", "drift", "reversion", "level_vol",
                "base_volume", "volume_noise", "seasonal_amplitude"});
    c.synth.regime = s.value("regime", c.synth.regime);
    c.synth.n_bars = s.value("n_bars", c.synth.n_bars);
    c.synth.assets = s.value("assets", c.synth.assets);
    c.synth.val_fraction = s.value("val_fraction", c.synth.val_fraction);
    c.synth.test_fraction = s.value("test_fraction", c.synth.test_fraction);
    auto& o = c.synth.options;
    o.frequency_minutes = s.value("frequency_minutes", o.frequency_minutes);
    if (s.contains("start_ts")) {
      const auto& v = s.at("start_ts");
      o.start_ts = v.is_string() ? data::parse_date(v.get<std::string>()) : v.get<std::int64_t>();
    }
    o.start_price = s.value("start_price", o.start_price);
    o.return_vol = s.value("return_vol", o.return_vol);
    o.drift = s.value("drift", o.drift);
    o.reversion = s.value("reversion", o.reversion);
    o.level_vol = s.value("level_vol", o.level_vol);
    o.base_volume = s.value("base_volume", o.base_volume);
    o.volume_noise = s.value("volume_noise", o.volume_noise);
    o.seasonal_amplitude = s.value("seasonal_amplitude", o.seasonal_amplitude);
    data::parse_regime(c.synth.regime);
    if (c.synth.assets == 0 || c.synth.n_bars == 0 || o.frequency_minutes <= 0) {
      throw ValidationError("synth: assets, n_bars and frequency_minutes must be positive");
    }
    if (!(c.synth.val_fraction > 0.0 && c.synth.val_fraction < c.synth.test_fraction &&
          c.synth.test_fraction < 1.0)) {
      throw ValidationError("synth: need 0 < val_fraction < test_fraction < 1");
    }

    const json d = section(j, "data");
    check_keys(d, "data", {"manifest", "dataset_dir"});
    c.manifest = path_or(d, "manifest");
    c.dataset_dir = path_or(d, "dataset_dir");

    const json f = section(j, "features");
    check_keys(f, "features",
               {"lookback", "horizon", "normalization_window", "seasonal_mode", "return_scale"});
    c.features.lookback = f.value("lookback", c.features.lookback);
    c.features.horizon = f.value("horizon", c.features.horizon);
    c.features.normalization_window =
        f.value("normalization_window", c.features.normalization_window);
    if (f.contains("seasonal_mode")) {
      c.features.seasonal = data::parse_seasonal_mode(f.at("seasonal_mode").get<std::string>());
    }
    c.features.return_scale = f.value("return_scale", c.features.return_scale);
    c.features.validate();

    json m = section(j, "model");
    check_keys(m, "model", {"encoder", "decision", "objective"});
    check_keys(section(m, "encoder"), "model.encoder",
               {"hidden", "heads", "tkan_sublayers", "spline_grid_size", "spline_order",
                "dropout"});
    check_keys(section(m, "decision"), "model.decision",
               {"mlp_depth", "mlp_width", "activation", "clip_sharpness", "min_rate", "max_rate",
                "return_channel", "volume_channel"});
    check_keys(section(m, "objective"), "model.objective", {"completion_sharpness", "epsilon"});
    m["lookback"] = c.features.lookback;
    m["horizon"] = c.features.horizon;
    m["channels"] = data::kFeatureCount;
    c.model = model::model_config_from_json(m);

    json t = section(j, "train");
    check_keys(t, "train",
               {"learning_rate", "batch_size", "early_stop_patience", "lr_reduce_patience",
                "lr_reduce_factor", "max_epochs", "seed", "precision", "beta1", "beta2",
                "adam_epsilon", "checkpoint"});
    c.checkpoint = path_or(t, "checkpoint");
    t.erase("checkpoint");
    train::TrainConfig base;
    base.seed = c.seed;
    c.train = train::train_config_from_json(t, base);

    const json e = section(j, "evaluate");
    check_keys(e, "evaluate", {"checkpoint", "split", "batch_size", "samples"});
    c.evaluate.checkpoint = path_or(e, "checkpoint");
    c.evaluate.split = e.value("split", c.evaluate.split);
    c.evaluate.batch_size = e.value("batch_size", c.evaluate.batch_size);
    c.evaluate.samples = path_or(e, "samples");
    if (c.evaluate.split != "train" && c.evaluate.split != "val" && c.evaluate.split != "test") {
      throw ValidationError(
          fmt::format("evaluate.split must be train, val or test, got '{}'", c.evaluate.split));
    }
    if (c.evaluate.batch_size == 0) {
      throw ValidationError("evaluate.batch_size must be positive");
    }

    const json r = section(j, "report");
    check_keys(r, "report", {"samples", "dir"});
    c.report.samples = path_or(r, "samples");
    c.report.dir = path_or(r, "dir");

    const json g = section(j, "gradcheck");
    check_keys(g, "gradcheck",
               {"batch", "hidden", "heads", "horizon", "channels", "lookback", "tolerance", "step",
                "sample_fraction"});
    auto& gc = c.gradcheck;
    gc.batch = g.value("batch", gc.batch);
    gc.hidden = g.value("hidden", gc.hidden);
    gc.heads = g.value("heads", gc.heads);
    gc.horizon = g.value("horizon", gc.horizon);
    gc.channels = g.value("channels", gc.channels);
    gc.lookback = g.value("lookback", gc.lookback);
    gc.tolerance = g.value("tolerance", gc.tolerance);
    gc.step = g.value("step", gc.step);
    gc.sample_fraction = g.value("sample_fraction", gc.sample_fraction);
    if (gc.batch == 0 || gc.channels < 2 || !(gc.tolerance > 0.0) || !(gc.step > 0.0) ||
        !(gc.sample_fraction > 0.0 && gc.sample_fraction <= 1.0)) {
      throw ValidationError(
          "gradcheck: need batch >= 1, channels >= 2, positive tolerance and step, "
          "sample_fraction in (0, 1]");
    }
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("config: {}", e.what()));
  }
  return c;
}

AppConfig load_config(const std::optional<fs::path>& path, const std::vector<std::string>& sets,
                      std::optional<std::uint64_t> seed) {
  json j = json::object();
  if (path) {
    std::ifstream in(*path);
    if (!in) {
      throw ValidationError(fmt::format("cannot open config {}", path->string()));
    }
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError(path->string(), 0, e.what());
    }
    if (!j.is_object()) {
      throw ValidationError(fmt::format("config {} must hold a JSON object", path->string()));
    }
  }
  for (const auto& s : sets) {
    apply_override(j, s);
  }
  if (seed) {
    j["seed"] = *seed;
  }
  return config_from_json(j);
}

}  // namespace lem::app
