// SPDX-License-Identifier: Apache-2.0

#include "lem/model/lem_model.hpp"

#include <cstring>
#include <fstream>

#include <fmt/format.h>

#include "lem/util/errors.hpp"

namespace lem::model {

void ModelConfig::finalize() {
  if (lookback < 1) {
    throw ValidationError("lookback must be >= 1");
  }
  if (horizon < 2) {
    throw ValidationError("horizon must be >= 2");
  }
  if (channels < 1) {
    throw ValidationError("feature channel count must be >= 1");
  }
  decision.horizon = horizon;
  encoder.validate();
  decision.validate(channels);
  if (!(objective.completion_sharpness > 0.0) || !(objective.epsilon > 0.0)) {
    throw ValidationError("objective.completion_sharpness and objective.epsilon must be positive");
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["lookback"] = c.lookback;
  j["horizon"] = c.horizon;
  j["channels"] = c.channels;
  j["encoder"] = {{"hidden", c.encoder.hidden},
                  {"heads", c.encoder.heads},
                  {"tkan_sublayers", c.encoder.tkan_sublayers},
                  {"spline_grid_size", c.encoder.spline_grid_size},
                  {"spline_order", c.encoder.spline_order},
                  {"dropout", c.encoder.dropout}};
  j["decision"] = {{"mlp_depth", c.decision.mlp_depth},
                   {"mlp_width", c.decision.mlp_width},
                   {"activation", c.decision.activation},
                   {"clip_sharpness", c.decision.clip_sharpness},
                   {"min_rate", c.decision.min_rate},
                   {"max_rate", c.decision.max_rate},
                   {"return_channel", c.decision.return_channel},
                   {"volume_channel", c.decision.volume_channel}};
  j["objective"] = {{"completion_sharpness", c.objective.completion_sharpness},
                    {"epsilon", c.objective.epsilon}};
  return nlohmann::json::parse(j.dump());
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.lookback = j.value("lookback", c.lookback);
    c.horizon = j.value("horizon", c.horizon);
    c.channels = j.value("channels", c.channels);
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      c.encoder.hidden = e.value("hidden", c.encoder.hidden);
      c.encoder.heads = e.value("heads", c.encoder.heads);
      c.encoder.tkan_sublayers = e.value("tkan_sublayers", c.encoder.tkan_sublayers);
      c.encoder.spline_grid_size = e.value("spline_grid_size", c.encoder.spline_grid_size);
      c.encoder.spline_order = e.value("spline_order", c.encoder.spline_order);
      c.encoder.dropout = e.value("dropout", c.encoder.dropout);
    }
    if (j.contains("decision")) {
      const auto& d = j.at("decision");
      c.decision.mlp_depth = d.value("mlp_depth", c.decision.mlp_depth);
      c.decision.mlp_width = d.value("mlp_width", c.decision.mlp_width);
      c.decision.activation = d.value("activation", c.decision.activation);
      c.decision.clip_sharpness = d.value("clip_sharpness", c.decision.clip_sharpness);
      c.decision.min_rate = d.value("min_rate", c.decision.min_rate);
      c.decision.max_rate = d.value("max_rate", c.decision.max_rate);
      c.decision.return_channel = d.value("return_channel", c.decision.return_channel);
      c.decision.volume_channel = d.value("volume_channel", c.decision.volume_channel);
    }
    if (j.contains("objective")) {
      const auto& o = j.at("objective");
      c.objective.completion_sharpness =
          o.value("completion_sharpness", c.objective.completion_sharpness);
      c.objective.epsilon = o.value("epsilon", c.objective.epsilon);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("model config: {}", e.what()));
  }
  c.finalize();
  return c;
}

template <typename T>
Batch<T> make_batch(const data::WindowSet& w, const std::vector<std::size_t>& indices) {
  const std::size_t B = indices.size();
  const std::size_t fs = w.feature_stride();
  const std::size_t N = w.horizon;
  std::vector<T> f(B * fs);
  std::vector<T> p(B * N);
  std::vector<T> v(B * N);
  for (std::size_t r = 0; r < B; ++r) {
    const std::size_t i = indices[r];
    for (std::size_t k = 0; k < fs; ++k) {
      f[r * fs + k] = static_cast<T>(w.features[i * fs + k]);
    }
    for (std::size_t k = 0; k < N; ++k) {
      p[r * N + k] = static_cast<T>(w.target_prices[i * N + k]);
      v[r * N + k] = static_cast<T>(w.target_volumes[i * N + k]);
    }
  }
  Batch<T> b;
  b.features = Tensor<T>::constant({B, w.steps, w.channels}, std::move(f));
  b.prices = Tensor<T>::constant({B, N}, std::move(p));
  b.volumes = Tensor<T>::constant({B, N}, std::move(v));
  return b;
}

template <typename T>
Batch<T> make_batch(const data::WindowSet& w, std::size_t begin, std::size_t end) {
  std::vector<std::size_t> idx;
  for (std::size_t i = begin; i < end; ++i) {
    idx.push_back(i);
  }
  return make_batch<T>(w, idx);
}

template <typename T>
LemModel<T>::LemModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.finalize();
  Rng rng(seed);
  encoder_ = encoder::ContextEncoder<T>(params_, "encoder", cfg_.encoder, cfg_.channels, rng);
  decision_ =
      decision::DecisionBlock<T>(params_, "decision", cfg_.decision, cfg_.encoder.hidden,
                                 cfg_.channels, rng);
}

template <typename T>
Tensor<T> LemModel<T>::context(const Tensor<T>& features,
                               const encoder::ForwardContext& ctx) const {
  if (features.rank() != 3 || features.dim(1) != cfg_.total_steps() ||
      features.dim(2) != cfg_.channels) {
    throw ShapeError(fmt::format("model expects features [B x {} x {}], got {}",
                                 cfg_.total_steps(), cfg_.channels,
                                 ad::shape_str(features.shape())));
  }
  return encoder_.forward(features, ctx);
}

template <typename T>
Tensor<T> LemModel<T>::allocate(const Tensor<T>& features,
                                const encoder::ForwardContext& ctx) const {
  return decision_.allocate(context(features, ctx), features);
}

template <typename T>
objective::ExecutionOutcome<T> LemModel<T>::evaluate(const Batch<T>& batch,
                                                     const encoder::ForwardContext& ctx) const {
  return objective::evaluate_objective(allocate(batch.features, ctx), batch.prices,
                                       batch.volumes, cfg_.objective);
}

template <typename T>
std::vector<std::vector<double>> LemModel<T>::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto d = params_.tensor(i).data();
    out.emplace_back(d.begin(), d.end());
  }
  return out;
}

template <typename T>
void LemModel<T>::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != params_.size()) {
    throw std::logic_error("snapshot does not match parameter count");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto dst = params_.tensor(i).mutable_data();
    if (dst.size() != values[i].size()) {
      throw std::logic_error(fmt::format("snapshot size mismatch for {}", params_.name(i)));
    }
    for (std::size_t k = 0; k < dst.size(); ++k) {
      dst[k] = static_cast<T>(values[i][k]);
    }
  }
}

namespace {

constexpr char kCkptMagic[8] = {'L', 'E', 'M', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint64_t get_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) {
    throw ValidationError("truncated checkpoint");
  }
  return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const LemModel<T>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error(fmt::format("cannot write checkpoint {}", path.string()));
  }
  out.write(kCkptMagic, sizeof(kCkptMagic));
  const std::string cfg = to_json(model.config()).dump();
  put_u64(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  const auto& store = model.params();
  put_u64(out, store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& name = store.name(i);
    const auto& t = store.tensor(i);
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, t.rank());
    for (auto d : t.shape()) {
      put_u64(out, d);
    }
    for (T v : t.data()) {
      const double x = static_cast<double>(v);
      out.write(reinterpret_cast<const char*>(&x), sizeof(x));
    }
  }
  if (!out) {
    throw std::runtime_error(fmt::format("failed writing checkpoint {}", path.string()));
  }
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ValidationError(fmt::format("cannot open checkpoint {}", path.string()));
  }
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0) {
    throw ValidationError(fmt::format("{} is not a checkpoint", path.string()));
  }
  Checkpoint ck;
  const auto cfg_len = get_u64(in);
  if (cfg_len > (1u << 24)) {
    throw ValidationError("corrupt checkpoint header");
  }
  std::string cfg(cfg_len, '\0');
  in.read(cfg.data(), static_cast<std::streamsize>(cfg_len));
  try {
    ck.config = model_config_from_json(nlohmann::json::parse(cfg));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("corrupt checkpoint config: {}", e.what()));
  }
  const auto count = get_u64(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = get_u64(in);
    if (len > 4096) {
      throw ValidationError("corrupt checkpoint entry");
    }
    std::string name(len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(len));
    Checkpoint::Entry e;
    const auto rank = get_u64(in);
    if (rank > 8) {
      throw ValidationError("corrupt checkpoint entry");
    }
    std::size_t n = 1;
    for (std::uint64_t r = 0; r < rank; ++r) {
      e.shape.push_back(get_u64(in));
      n *= e.shape.back();
    }
    e.values.resize(n);
    in.read(reinterpret_cast<char*>(e.values.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) {
      throw ValidationError("truncated checkpoint");
    }
    ck.tensors.emplace_back(std::move(name), std::move(e));
  }
  return ck;
}

template <typename T>
std::unique_ptr<LemModel<T>> load_model(const Checkpoint& ckpt) {
  auto model = std::make_unique<LemModel<T>>(ckpt.config, 0);
  auto& store = model->params();
  if (store.size() != ckpt.tensors.size()) {
    throw ValidationError(fmt::format("checkpoint holds {} tensors, model expects {}",
                                      ckpt.tensors.size(), store.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& [name, entry] = ckpt.tensors[i];
    if (name != store.name(i) || entry.shape != store.tensor(i).shape()) {
      throw ValidationError(fmt::format("checkpoint tensor {} {} does not match model {} {}", name,
                                        ad::shape_str(entry.shape), store.name(i),
                                        ad::shape_str(store.tensor(i).shape())));
    }
    auto dst = store.tensor(i).mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      dst[k] = static_cast<T>(entry.values[k]);
    }
  }
  return model;
}

#define LEM_INSTANTIATE_MODEL(T)                                                          \
  template Batch<T> make_batch<T>(const data::WindowSet&, const std::vector<std::size_t>&); \
  template Batch<T> make_batch<T>(const data::WindowSet&, std::size_t, std::size_t);      \
  template class LemModel<T>;                                                             \
  template void save_checkpoint<T>(const LemModel<T>&, const std::filesystem::path&);     \
  template std::unique_ptr<LemModel<T>> load_model<T>(const Checkpoint&);

LEM_INSTANTIATE_MODEL(float)
LEM_INSTANTIATE_MODEL(double)

#undef LEM_INSTANTIATE_MODEL

}  // namespace lem::model
