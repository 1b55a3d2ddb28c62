// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lem/data/features.hpp"
#include "lem/model/lem_model.hpp"

namespace lem::train {

struct TrainConfig {
  double learning_rate{1e-5};
  std::size_t batch_size{256};
  std::size_t early_stop_patience{2};
  std::size_t lr_reduce_patience{1};
  double lr_reduce_factor{0.5};
  std::size_t max_epochs{50};
  std::uint64_t seed{0};
  std::string precision{"single"};
  double beta1{0.9};
  double beta2{0.999};
  double adam_epsilon{1e-7};

  void validate() const;
};

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});

// Adam with bias correction; moments are kept in double.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-7)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  template <typename T>
  void step(model::ParamStore<T>& params, double lr);

  std::uint64_t steps() const { return t_; }

 private:
  double beta1_, beta2_, epsilon_;
  std::uint64_t t_{0};
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

// Plateau bookkeeping with "stop once `patience` epochs pass without
// improvement" semantics for both the lr schedule and early stopping.
class PlateauTracker {
 public:
  PlateauTracker(std::size_t reduce_patience, std::size_t stop_patience)
      : reduce_patience_(reduce_patience), stop_patience_(stop_patience) {}

  struct Decision {
    bool improved{false};
    bool reduce_lr{false};
    bool stop{false};
  };

  Decision observe(double val_loss);
  double best() const { return best_; }
  std::size_t best_epoch() const { return best_epoch_; }

 private:
  std::size_t reduce_patience_;
  std::size_t stop_patience_;
  double best_{std::numeric_limits<double>::infinity()};
  std::size_t best_epoch_{0};
  std::size_t epoch_{0};
  std::size_t reduce_wait_{0};
  std::size_t stop_wait_{0};
};

struct EpochRecord {
  std::size_t epoch{0};
  double train_loss{0.0};
  double val_loss{0.0};
  double lr{0.0};
  bool improved{false};
  bool lr_reduced{false};
};

struct TrainReport {
  double initial_val_loss{0.0};
  std::vector<EpochRecord> epochs;
  std::vector<std::string> lr_events;
  std::size_t best_epoch{0};
  double best_val_loss{0.0};
  std::size_t stop_epoch{0};
  bool early_stopped{false};
  std::string checkpoint;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

// Sample-weighted mean of the per-batch total loss, without gradients.
template <typename T>
double mean_loss(const model::LemModel<T>& m, const data::WindowSet& set, std::size_t batch_size);

using EpochCallback = std::function<void(const EpochRecord&)>;

template <typename T>
TrainReport train(model::LemModel<T>& m, const data::WindowSet& train_set,
                  const data::WindowSet& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace lem::train
