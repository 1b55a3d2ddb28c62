// SPDX-License-Identifier: Apache-2.0

#include "lem/encoder/layers.hpp"

#include <cmath>

#include <fmt/format.h>

#include "lem/util/errors.hpp"

namespace lem::encoder {

using namespace lem::ad;
using model::constant_values;
using model::glorot_uniform;

namespace {

template <typename T>
Tensor<T> weight(ParamStore<T>& store, const std::string& name, std::size_t fan_in,
                 std::size_t fan_out, Shape shape, Rng& rng) {
  const std::size_t n = numel(shape);
  return store.add(name, std::move(shape), glorot_uniform(rng, fan_in, fan_out, n));
}

template <typename T>
Tensor<T> filled(ParamStore<T>& store, const std::string& name, Shape shape, double value) {
  const std::size_t n = numel(shape);
  return store.add(name, std::move(shape), constant_values(n, value));
}

}  // namespace

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, const ForwardContext& ctx) {
  if (!ctx.training || ctx.rng == nullptr || ctx.dropout <= 0.0) {
    return x;
  }
  const double keep = 1.0 - ctx.dropout;
  std::vector<T> mask(x.size());
  for (auto& m : mask) {
    m = ctx.rng->uniform() < keep ? static_cast<T>(1.0 / keep) : T{0};
  }
  return x * Tensor<T>::constant(x.shape(), std::move(mask));
}

// ---- GLU ----

template <typename T>
Glu<T>::Glu(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
            Rng& rng) {
  w4 = weight(store, prefix + ".w4", in, out, {in, out}, rng);
  b4 = filled(store, prefix + ".b4", {out}, 0.0);
  w5 = weight(store, prefix + ".w5", in, out, {in, out}, rng);
  b5 = filled(store, prefix + ".b5", {out}, 0.0);
}

template <typename T>
Tensor<T> Glu<T>::forward(const Tensor<T>& x) const {
  auto gate = sigmoid(matmul(x, w4) + b4);
  return gate * (matmul(x, w5) + b5);
}

// ---- GRN ----

template <typename T>
Grn<T>::Grn(ParamStore<T>& store, const std::string& prefix, std::size_t in_,
            std::size_t hidden_, std::size_t out_, Rng& rng)
    : in(in_), hidden(hidden_), out(out_) {
  w2 = weight(store, prefix + ".w2", in, hidden, {in, hidden}, rng);
  b2 = filled(store, prefix + ".b2", {hidden}, 0.0);
  w1 = weight(store, prefix + ".w1", hidden, hidden, {hidden, hidden}, rng);
  b1 = filled(store, prefix + ".b1", {hidden}, 0.0);
  glu = Glu<T>(store, prefix + ".glu", hidden, out, rng);
  if (in != out) {
    w_skip = weight(store, prefix + ".w_skip", in, out, {in, out}, rng);
  }
  gamma = filled(store, prefix + ".ln_gamma", {out}, 1.0);
  beta = filled(store, prefix + ".ln_beta", {out}, 0.0);
}

template <typename T>
Tensor<T> Grn<T>::forward(const Tensor<T>& x, const ForwardContext& ctx) const {
  if (x.shape().back() != in) {
    throw ShapeError(fmt::format("GRN expects last axis {}, got {}", in, shape_str(x.shape())));
  }
  auto eta = matmul(elu(matmul(x, w2) + b2), w1) + b1;
  auto gated = glu.forward(dropout(eta, ctx));
  auto skip = in == out ? x : matmul(x, w_skip);
  return layer_norm(skip + gated, static_cast<T>(1e-5)) * gamma + beta;
}

// ---- grouped GRN ----

template <typename T>
GroupedGrn<T>::GroupedGrn(ParamStore<T>& store, const std::string& prefix, std::size_t groups_,
                          std::size_t width_, Rng& rng)
    : groups(groups_), width(width_) {
  const std::size_t G = groups;
  const std::size_t H = width;
  w2 = weight(store, prefix + ".w2", H, H, {G, H, H}, rng);
  b2 = filled(store, prefix + ".b2", {G, H}, 0.0);
  w1 = weight(store, prefix + ".w1", H, H, {G, H, H}, rng);
  b1 = filled(store, prefix + ".b1", {G, H}, 0.0);
  w4 = weight(store, prefix + ".glu.w4", H, H, {G, H, H}, rng);
  b4 = filled(store, prefix + ".glu.b4", {G, H}, 0.0);
  w5 = weight(store, prefix + ".glu.w5", H, H, {G, H, H}, rng);
  b5 = filled(store, prefix + ".glu.b5", {G, H}, 0.0);
  gamma = filled(store, prefix + ".ln_gamma", {G, H}, 1.0);
  beta = filled(store, prefix + ".ln_beta", {G, H}, 0.0);
}

template <typename T>
Tensor<T> GroupedGrn<T>::forward(const Tensor<T>& x, const ForwardContext& ctx) const {
  if (x.rank() != 3 || x.dim(1) != groups || x.dim(2) != width) {
    throw ShapeError(fmt::format("grouped GRN expects [R x {} x {}], got {}", groups, width,
                                 shape_str(x.shape())));
  }
  auto eta = grouped_matmul(elu(grouped_matmul(x, w2) + b2), w1) + b1;
  eta = dropout(eta, ctx);
  auto gated = sigmoid(grouped_matmul(eta, w4) + b4) * (grouped_matmul(eta, w5) + b5);
  return layer_norm(x + gated, static_cast<T>(1e-5)) * gamma + beta;
}

// ---- embedding ----

template <typename T>
Embedding<T>::Embedding(ParamStore<T>& store, const std::string& prefix, std::size_t channels_,
                        std::size_t width_, Rng& rng)
    : channels(channels_), width(width_) {
  w = weight(store, prefix + ".w", 1, width, {channels, width}, rng);
  b = filled(store, prefix + ".b", {channels, width}, 0.0);
}

template <typename T>
Tensor<T> Embedding<T>::forward_channel_major(const Tensor<T>& x) const {
  if (x.rank() != 3 || x.dim(2) != channels) {
    throw ShapeError(fmt::format("embedding expects [B x T x {}], got {}", channels,
                                 shape_str(x.shape())));
  }
  auto col = reshape(x, {x.dim(0), x.dim(1), channels, 1});
  return col * w + b;
}

template <typename T>
Tensor<T> Embedding<T>::forward(const Tensor<T>& x) const {
  return permute(forward_channel_major(x), {0, 1, 3, 2});
}

// ---- VSN ----

template <typename T>
Vsn<T>::Vsn(ParamStore<T>& store, const std::string& prefix, std::size_t channels_,
            std::size_t width_, Rng& rng)
    : channels(channels_), width(width_) {
  select = Grn<T>(store, prefix + ".select", channels * width, width, channels, rng);
  per_variable = GroupedGrn<T>(store, prefix + ".var", channels, width, rng);
}

template <typename T>
VsnOutput<T> Vsn<T>::forward(const Tensor<T>& e, const ForwardContext& ctx) const {
  if (e.rank() != 4 || e.dim(2) != channels || e.dim(3) != width) {
    throw ShapeError(fmt::format("VSN expects [B x T x {} x {}], got {}", channels, width,
                                 shape_str(e.shape())));
  }
  const std::size_t B = e.dim(0);
  const std::size_t S = e.dim(1);
  const std::size_t D = channels;
  const std::size_t H = width;
  auto weights = softmax_last(select.forward(reshape(e, {B, S, D * H}), ctx));
  auto processed = per_variable.forward(reshape(e, {B * S, D, H}), ctx);
  auto mixed = sum(processed * reshape(weights, {B * S, D, 1}), 1);
  return {reshape(mixed, {B, S, H}), weights};
}

// ---- KAN ----

template <typename T>
KanLayer<T>::KanLayer(ParamStore<T>& store, const std::string& prefix, std::size_t in_,
                      std::size_t out_, const SplineGrid& grid_, Rng& rng)
    : in(in_), out(out_), grid(grid_) {
  const std::size_t nb = grid.basis_count();
  w_base = weight(store, prefix + ".w_base", in, out, {in, out}, rng);
  w_spline = weight(store, prefix + ".w_spline", in * nb, out, {in * nb, out}, rng);
}

template <typename T>
Tensor<T> KanLayer<T>::forward(const Tensor<T>& s) const {
  if (s.shape().back() != in) {
    throw ShapeError(fmt::format("KAN layer expects last axis {}, got {}", in,
                                 shape_str(s.shape())));
  }
  Shape flat = s.shape();
  flat.back() = in * grid.basis_count();
  auto spline = matmul(reshape(bspline_basis(s, grid), flat), w_spline);
  return matmul(silu(s), w_base) + spline;
}

// ---- TKAN ----

template <typename T>
Tkan<T>::Tkan(ParamStore<T>& store, const std::string& prefix, std::size_t in_,
              std::size_t width_, std::size_t sublayers_, const SplineGrid& grid, Rng& rng)
    : in(in_), width(width_), sublayers(sublayers_) {
  const std::size_t W = width;
  const std::size_t L = sublayers;
  w_x = weight(store, prefix + ".w_x", in, W, {in, (L + 3) * W}, rng);
  w_h = weight(store, prefix + ".w_h", W, W, {W, 3 * W}, rng);
  b_gates = filled(store, prefix + ".b_gates", {3 * W}, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    const std::string p = fmt::format("{}.sub{}", prefix, l);
    w_sub_h.push_back(weight(store, p + ".w_h", W, W, {W, W}, rng));
    w_hh.push_back(weight(store, p + ".w_hh", W, W, {W}, rng));
    w_hz.push_back(weight(store, p + ".w_hz", W, W, {W}, rng));
    kan.emplace_back(store, p + ".kan", W, W, grid, rng);
  }
  w_o = weight(store, prefix + ".w_o", L * W, W, {L * W, W}, rng);
  b_o = filled(store, prefix + ".b_o", {W}, 0.0);
}

template <typename T>
Tensor<T> Tkan<T>::forward(const Tensor<T>& x) const {
  if (x.rank() != 3 || x.dim(2) != in) {
    throw ShapeError(
        fmt::format("TKAN expects [B x T x {}], got {}", in, shape_str(x.shape())));
  }
  const std::size_t B = x.dim(0);
  const std::size_t S = x.dim(1);
  const std::size_t W = width;
  const std::size_t L = sublayers;
  const std::size_t X = (L + 3) * W;
  auto projected = matmul(x, w_x);

  Tensor<T> h;
  Tensor<T> c;
  std::vector<Tensor<T>> sub(L);
  std::vector<Tensor<T>> outputs;
  outputs.reserve(S);
  for (std::size_t t = 0; t < S; ++t) {
    auto xt = reshape(slice(projected, 1, t, 1), {B, X});
    std::vector<Tensor<T>> kan_out;
    kan_out.reserve(L);
    for (std::size_t l = 0; l < L; ++l) {
      auto s = slice(xt, 1, l * W, W);
      if (t > 0) {
        s = s + matmul(sub[l], w_sub_h[l]);
      }
      auto o = kan[l].forward(s);
      sub[l] = t > 0 ? w_hh[l] * sub[l] + w_hz[l] * o : w_hz[l] * o;
      kan_out.push_back(o);
    }
    auto out_gate = sigmoid(matmul(L == 1 ? kan_out[0] : concat(kan_out, 1), w_o) + b_o);

    auto gates = slice(xt, 1, L * W, 3 * W) + b_gates;
    if (t > 0) {
      gates = gates + matmul(h, w_h);
    }
    auto f = sigmoid(slice(gates, 1, 0, W));
    auto i = sigmoid(slice(gates, 1, W, W));
    auto candidate = tanh(slice(gates, 1, 2 * W, W));
    c = t > 0 ? f * c + i * candidate : i * candidate;
    h = out_gate * tanh(c);
    outputs.push_back(h);
  }
  return stack(outputs, 1);
}

// ---- attention ----

template <typename T>
CausalAttention<T>::CausalAttention(ParamStore<T>& store, const std::string& prefix,
                                    std::size_t width_, std::size_t heads_, Rng& rng)
    : width(width_), heads(heads_) {
  if (heads == 0 || width % heads != 0) {
    throw ValidationError(fmt::format("hidden size {} not divisible by {} heads", width, heads));
  }
  const std::size_t H = width;
  wq = weight(store, prefix + ".wq", H, H, {H, H}, rng);
  wk = weight(store, prefix + ".wk", H, H, {H, H}, rng);
  wv = weight(store, prefix + ".wv", H, H, {H, H}, rng);
  wh = weight(store, prefix + ".wh", H, H, {H, H}, rng);
  gate = Grn<T>(store, prefix + ".gate", H, H, H, rng);
}

template <typename T>
Tensor<T> CausalAttention<T>::attend(const Tensor<T>& h, Tensor<T>* weights) const {
  if (h.rank() != 3 || h.dim(2) != width) {
    throw ShapeError(
        fmt::format("attention expects [B x T x {}], got {}", width, shape_str(h.shape())));
  }
  const std::size_t B = h.dim(0);
  const std::size_t S = h.dim(1);
  const std::size_t m = heads;
  const std::size_t d = width / heads;
  auto split = [&](const Tensor<T>& y) {
    return reshape(permute(reshape(y, {B, S, m, d}), {0, 2, 1, 3}), {B * m, S, d});
  };
  auto q = split(matmul(h, wq));
  auto k = split(matmul(h, wk));
  auto v = split(matmul(h, wv));
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
  auto a = causal_softmax(mul_scalar(bmm(q, k, true), scale));
  if (weights != nullptr) {
    *weights = reshape(a, {B, m, S, S});
  }
  auto heads_out = reshape(bmm(a, v), {B, m, S, d});
  auto merged = reshape(permute(heads_out, {0, 2, 1, 3}), {B, S, width});
  return matmul(merged, wh);
}

template <typename T>
Tensor<T> CausalAttention<T>::forward(const Tensor<T>& h, const ForwardContext& ctx) const {
  return gate.forward(h + attend(h), ctx);
}

// ---- encoder ----

void EncoderConfig::validate() const {
  if (hidden == 0 || heads == 0 || hidden % heads != 0) {
    throw ValidationError(
        fmt::format("encoder.hidden ({}) must be a positive multiple of encoder.heads ({})",
                    hidden, heads));
  }
  if (tkan_sublayers == 0 || spline_grid_size == 0 || spline_order == 0) {
    throw ValidationError("encoder.tkan_sublayers, spline_grid_size, spline_order must be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ValidationError("encoder.dropout must lie in [0, 1)");
  }
}

template <typename T>
ContextEncoder<T>::ContextEncoder(ParamStore<T>& store, const std::string& prefix,
                                  const EncoderConfig& cfg_, std::size_t channels_, Rng& rng)
    : cfg(cfg_), channels(channels_) {
  cfg.validate();
  SplineGrid grid;
  grid.grid_size = cfg.spline_grid_size;
  grid.order = cfg.spline_order;
  embedding = Embedding<T>(store, prefix + ".embed", channels, cfg.hidden, rng);
  vsn = Vsn<T>(store, prefix + ".vsn", channels, cfg.hidden, rng);
  tkan = Tkan<T>(store, prefix + ".tkan", cfg.hidden, cfg.hidden, cfg.tkan_sublayers, grid, rng);
  attention = CausalAttention<T>(store, prefix + ".attn", cfg.hidden, cfg.heads, rng);
}

template <typename T>
Tensor<T> ContextEncoder<T>::forward(const Tensor<T>& x, const ForwardContext& ctx,
                                     EncoderTrace<T>* trace) const {
  ForwardContext local = ctx;
  local.dropout = cfg.dropout;
  auto selected = vsn.forward(embedding.forward_channel_major(x), local);
  auto recurrent = tkan.forward(selected.combined);
  if (trace != nullptr) {
    trace->vsn_weights = selected.weights;
    trace->tkan = recurrent;
  }
  return attention.forward(recurrent, local);
}

#define LEM_INSTANTIATE_ENCODER(T)                                        \
  template Tensor<T> dropout<T>(const Tensor<T>&, const ForwardContext&); \
  template struct Glu<T>;                                                 \
  template struct Grn<T>;                                                 \
  template struct GroupedGrn<T>;                                          \
  template struct Embedding<T>;                                           \
  template struct Vsn<T>;                                                 \
  template struct KanLayer<T>;                                            \
  template struct Tkan<T>;                                                \
  template struct CausalAttention<T>;                                     \
  template struct ContextEncoder<T>;

LEM_INSTANTIATE_ENCODER(float)
LEM_INSTANTIATE_ENCODER(double)

#undef LEM_INSTANTIATE_ENCODER

}  // namespace lem::encoder
