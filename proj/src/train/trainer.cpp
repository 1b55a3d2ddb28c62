// SPDX-License-Identifier: Apache-2.0

#include "lem/train/trainer.hpp"

#include <cmath>

#include <fmt/format.h>

#include "lem/util/errors.hpp"
#include "lem/util/rng.hpp"

namespace lem::train {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) {
    throw ValidationError("train.learning_rate must be positive");
  }
  if (batch_size == 0 || max_epochs == 0) {
    throw ValidationError("train.batch_size and train.max_epochs must be positive");
  }
  if (!(lr_reduce_factor > 0.0 && lr_reduce_factor < 1.0)) {
    throw ValidationError("train.lr_reduce_factor must lie in (0, 1)");
  }
  if (lr_reduce_patience > early_stop_patience) {
    throw ValidationError("train.lr_reduce_patience must not exceed train.early_stop_patience");
  }
  if (precision != "single" && precision != "double") {
    throw ValidationError(fmt::format("train.precision must be single or double, got '{}'",
                                      precision));
  }
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.early_stop_patience = j.value("early_stop_patience", c.early_stop_patience);
    c.lr_reduce_patience = j.value("lr_reduce_patience", c.lr_reduce_patience);
    c.lr_reduce_factor = j.value("lr_reduce_factor", c.lr_reduce_factor);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.seed = j.value("seed", c.seed);
    c.precision = j.value("precision", c.precision);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.adam_epsilon = j.value("adam_epsilon", c.adam_epsilon);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("train config: {}", e.what()));
  }
  c.validate();
  return c;
}

template <typename T>
void Adam::step(model::ParamStore<T>& params, double lr) {
  if (m_.size() != params.size()) {
    m_.assign(params.size(), {});
    v_.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params.tensor(i).size(), 0.0);
      v_[i].assign(params.tensor(i).size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params.tensor(i);
    if (!p.has_grad()) {
      continue;
    }
    auto value = p.mutable_data();
    const auto grad = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = static_cast<double>(grad[k]);
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      const double update = lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + epsilon_);
      value[k] = static_cast<T>(static_cast<double>(value[k]) - update);
    }
  }
}

PlateauTracker::Decision PlateauTracker::observe(double val_loss) {
  ++epoch_;
  Decision d;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    reduce_wait_ = 0;
    stop_wait_ = 0;
    d.improved = true;
    return d;
  }
  ++reduce_wait_;
  ++stop_wait_;
  if (reduce_wait_ >= reduce_patience_) {
    d.reduce_lr = true;
    reduce_wait_ = 0;
  }
  if (stop_wait_ >= stop_patience_) {
    d.stop = true;
  }
  return d;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::ordered_json j;
  j["initial_val_loss"] = initial_val_loss;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"val_loss", e.val_loss},
                           {"lr", e.lr},
                           {"improved", e.improved},
                           {"lr_reduced", e.lr_reduced}});
  }
  j["lr_events"] = lr_events;
  j["best_epoch"] = best_epoch;
  j["best_val_loss"] = best_val_loss;
  j["stop_epoch"] = stop_epoch;
  j["early_stopped"] = early_stopped;
  j["checkpoint"] = checkpoint;
  j["warnings"] = warnings;
  return nlohmann::json::parse(j.dump());
}

template <typename T>
double mean_loss(const model::LemModel<T>& m, const data::WindowSet& set, std::size_t batch_size) {
  if (set.empty()) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  ad::NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t begin = 0; begin < set.size(); begin += batch_size) {
    const std::size_t end = std::min(set.size(), begin + batch_size);
    auto batch = model::make_batch<T>(set, begin, end);
    const double loss = static_cast<double>(m.evaluate(batch).loss.total.item());
    total += loss * static_cast<double>(end - begin);
  }
  return total / static_cast<double>(set.size());
}

namespace {

template <typename T>
void require_finite_gradients(const model::ParamStore<T>& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (T g : params.tensor(i).grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw NonFiniteLoss(params.name(i),
                            fmt::format("non-finite gradient for parameter '{}'", params.name(i)));
      }
    }
  }
}

}  // namespace

template <typename T>
TrainReport train(model::LemModel<T>& m, const data::WindowSet& train_set,
                  const data::WindowSet& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.empty()) {
    throw ValidationError("training set is empty");
  }
  if (val_set.empty()) {
    throw ValidationError("validation set is empty");
  }
  const auto& mc = m.config();
  if (train_set.steps != mc.total_steps() || train_set.channels != mc.channels ||
      train_set.horizon != mc.horizon) {
    throw ShapeError(fmt::format("dataset windows T={} D={} N={} do not match model T={} D={} N={}",
                                 train_set.steps, train_set.channels, train_set.horizon,
                                 mc.total_steps(), mc.channels, mc.horizon));
  }

  TrainReport report;
  Rng shuffle_rng(derive_seed(cfg.seed, 1));
  Rng dropout_rng(derive_seed(cfg.seed, 2));
  Adam adam(cfg.beta1, cfg.beta2, cfg.adam_epsilon);
  PlateauTracker plateau(cfg.lr_reduce_patience, cfg.early_stop_patience);
  double lr = cfg.learning_rate;

  report.initial_val_loss = mean_loss(m, val_set, cfg.batch_size);
  auto best_params = m.snapshot();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto order = shuffle_rng.permutation(train_set.size());
    double train_total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
      auto batch = model::make_batch<T>(train_set, idx);
      encoder::ForwardContext ctx{true, &dropout_rng, 0.0};
      m.params().zero_grad();
      auto outcome = m.evaluate(batch, ctx);
      outcome.loss.total.backward();
      require_finite_gradients(m.params());
      adam.step(m.params(), lr);
      train_total += static_cast<double>(outcome.loss.total.item()) *
                     static_cast<double>(end - begin);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_total / static_cast<double>(train_set.size());
    rec.val_loss = mean_loss(m, val_set, cfg.batch_size);
    if (!std::isfinite(rec.val_loss)) {
      throw NonFiniteLoss("validation", fmt::format("non-finite validation loss at epoch {}", epoch));
    }
    rec.lr = lr;
    const auto decision = plateau.observe(rec.val_loss);
    rec.improved = decision.improved;
    if (decision.improved) {
      best_params = m.snapshot();
    }
    if (decision.reduce_lr) {
      const double next = lr * cfg.lr_reduce_factor;
      report.lr_events.push_back(fmt::format("epoch {}: lr {:g} -> {:g}", epoch, lr, next));
      lr = next;
      rec.lr_reduced = true;
    }
    report.epochs.push_back(rec);
    if (on_epoch) {
      on_epoch(rec);
    }
    report.stop_epoch = epoch;
    if (decision.stop) {
      report.early_stopped = true;
      break;
    }
  }
  m.restore(best_params);
  report.best_epoch = plateau.best_epoch();
  report.best_val_loss = plateau.best();
  return report;
}

template void Adam::step<float>(model::ParamStore<float>&, double);
template void Adam::step<double>(model::ParamStore<double>&, double);
template double mean_loss<float>(const model::LemModel<float>&, const data::WindowSet&, std::size_t);
template double mean_loss<double>(const model::LemModel<double>&, const data::WindowSet&,
                                  std::size_t);
template TrainReport train<float>(model::LemModel<float>&, const data::WindowSet&,
                                  const data::WindowSet&, const TrainConfig&, const EpochCallback&);
template TrainReport train<double>(model::LemModel<double>&, const data::WindowSet&,
                                   const data::WindowSet&, const TrainConfig&,
                                   const EpochCallback&);

}  // namespace lem::train
