// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lem/data/features.hpp"
#include "lem/decision/allocation.hpp"
#include "lem/encoder/layers.hpp"
#include "lem/model/params.hpp"
#include "lem/objective/loss.hpp"

namespace lem::model {

struct ModelConfig {
  std::size_t lookback{48};
  std::size_t horizon{12};
  std::size_t channels{data::kFeatureCount};
  encoder::EncoderConfig encoder;
  decision::DecisionConfig decision;
  objective::ObjectiveConfig objective;

  std::size_t total_steps() const { return lookback + horizon; }
  // Copies the shared horizon into the decision config and checks ranges.
  void finalize();
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// A batch of windows as tensors.
template <typename T>
struct Batch {
  Tensor<T> features;  // [B, T, D]
  Tensor<T> prices;    // [B, N]
  Tensor<T> volumes;   // [B, N]
  std::size_t size() const { return features.dim(0); }
};

template <typename T>
Batch<T> make_batch(const data::WindowSet& w, const std::vector<std::size_t>& indices);
template <typename T>
Batch<T> make_batch(const data::WindowSet& w, std::size_t begin, std::size_t end);

template <typename T>
class LemModel {
 public:
  LemModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const encoder::ContextEncoder<T>& encoder() const { return encoder_; }
  const decision::DecisionBlock<T>& decision() const { return decision_; }

  Tensor<T> context(const Tensor<T>& features, const encoder::ForwardContext& ctx = {}) const;
  // [B, T, D] -> [B, N, N+1, 4, 2]
  Tensor<T> allocate(const Tensor<T>& features, const encoder::ForwardContext& ctx = {}) const;
  objective::ExecutionOutcome<T> evaluate(const Batch<T>& batch,
                                          const encoder::ForwardContext& ctx = {}) const;

  // Flat copies of every parameter, in store order.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  encoder::ContextEncoder<T> encoder_;
  decision::DecisionBlock<T> decision_;
};

// Raw checkpoint contents: configuration plus name -> (shape, values).
struct Checkpoint {
  ModelConfig config;
  struct Entry {
    std::vector<std::size_t> shape;
    std::vector<double> values;
  };
  std::vector<std::pair<std::string, Entry>> tensors;
};

template <typename T>
void save_checkpoint(const LemModel<T>& model, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);
// Builds a model from a checkpoint, verifying every name and shape.
template <typename T>
std::unique_ptr<LemModel<T>> load_model(const Checkpoint& ckpt);

}  // namespace lem::model
