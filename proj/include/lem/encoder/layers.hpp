// SPDX-License-Identifier: Apache-2.0
//
// Building blocks of the context encoder. Each layer registers its
// parameters in a ParamStore under a name prefix at construction time and
// holds tensor handles to them; forward() builds a fresh graph per call.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "lem/ad/ops.hpp"
#include "lem/model/params.hpp"
#include "lem/util/rng.hpp"

namespace lem::encoder {

using ad::Shape;
using ad::Tensor;
using model::ParamStore;

// Per-call state: dropout is active only when training with a generator.
struct ForwardContext {
  bool training{false};
  Rng* rng{nullptr};
  double dropout{0.0};
};

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, const ForwardContext& ctx);

// sigma(x W4 + b4) * (x W5 + b5)
template <typename T>
struct Glu {
  Tensor<T> w4, b4, w5, b5;

  Glu() = default;
  Glu(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x) const;
};

// LayerNorm(skip(x) + GLU(W1 ELU(W2 x + b2) + b1)); skip is the identity when
// in == out and a bias-free projection otherwise.
template <typename T>
struct Grn {
  std::size_t in{0}, hidden{0}, out{0};
  Tensor<T> w2, b2, w1, b1, w_skip, gamma, beta;
  Glu<T> glu;

  Grn() = default;
  Grn(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t hidden,
      std::size_t out, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx = {}) const;
};

// D independent H -> H GRNs applied to [R, D, H] in one pass.
template <typename T>
struct GroupedGrn {
  std::size_t groups{0}, width{0};
  Tensor<T> w2, b2, w1, b1, w4, b4, w5, b5, gamma, beta;

  GroupedGrn() = default;
  GroupedGrn(ParamStore<T>& store, const std::string& prefix, std::size_t groups,
             std::size_t width, Rng& rng);
  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx = {}) const;
};

// Per-channel affine embedding.
template <typename T>
struct Embedding {
  std::size_t channels{0}, width{0};
  Tensor<T> w, b;  // [D, H]

  Embedding() = default;
  Embedding(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
            std::size_t width, Rng& rng);
  // [B, T, D] -> [B, T, D, H] (channel-major, the layout the VSN consumes)
  Tensor<T> forward_channel_major(const Tensor<T>& x) const;
  // [B, T, D] -> [B, T, H, D]
  Tensor<T> forward(const Tensor<T>& x) const;
};

template <typename T>
struct VsnOutput {
  Tensor<T> combined;  // [B, T, H]
  Tensor<T> weights;   // [B, T, D]
};

template <typename T>
struct Vsn {
  std::size_t channels{0}, width{0};
  Grn<T> select;
  GroupedGrn<T> per_variable;

  Vsn() = default;
  Vsn(ParamStore<T>& store, const std::string& prefix, std::size_t channels, std::size_t width,
      Rng& rng);
  // Input in channel-major layout [B, T, D, H].
  VsnOutput<T> forward(const Tensor<T>& e, const ForwardContext& ctx = {}) const;
};

// y_o = sum_i Wb[i,o] SiLU(s_i) + sum_i sum_k C[i,k,o] B_k(s_i)
template <typename T>
struct KanLayer {
  std::size_t in{0}, out{0};
  ad::SplineGrid grid;
  Tensor<T> w_base;    // [in, out]
  Tensor<T> w_spline;  // [in * basis_count, out]

  KanLayer() = default;
  KanLayer(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t out,
           const ad::SplineGrid& grid, Rng& rng);
  Tensor<T> forward(const Tensor<T>& s) const;
};

template <typename T>
struct Tkan {
  std::size_t in{0}, width{0}, sublayers{0};
  Tensor<T> w_x;       // [in, (sublayers + 3) * width]: sub-layer inputs then f, i, c gates
  Tensor<T> w_h;       // [width, 3 * width]: gates from the previous output
  Tensor<T> b_gates;   // [3 * width]
  std::vector<Tensor<T>> w_sub_h;  // per sub-layer [width, width]
  std::vector<Tensor<T>> w_hh;     // per sub-layer [width]
  std::vector<Tensor<T>> w_hz;     // per sub-layer [width]
  std::vector<KanLayer<T>> kan;
  Tensor<T> w_o;  // [sublayers * width, width]
  Tensor<T> b_o;  // [width]

  Tkan() = default;
  Tkan(ParamStore<T>& store, const std::string& prefix, std::size_t in, std::size_t width,
       std::size_t sublayers, const ad::SplineGrid& grid, Rng& rng);
  // [B, T, in] -> [B, T, width]
  Tensor<T> forward(const Tensor<T>& x) const;
};

template <typename T>
struct CausalAttention {
  std::size_t width{0}, heads{0};
  Tensor<T> wq, wk, wv, wh;  // [H, H], no biases
  Grn<T> gate;

  CausalAttention() = default;
  CausalAttention(ParamStore<T>& store, const std::string& prefix, std::size_t width,
                  std::size_t heads, Rng& rng);
  // Multi-head masked attention only, [B, T, H] -> [B, T, H].
  Tensor<T> attend(const Tensor<T>& h, Tensor<T>* weights = nullptr) const;
  // GRN(h + attend(h))
  Tensor<T> forward(const Tensor<T>& h, const ForwardContext& ctx = {}) const;
};

struct EncoderConfig {
  std::size_t hidden{32};
  std::size_t heads{4};
  std::size_t tkan_sublayers{2};
  std::size_t spline_grid_size{5};
  std::size_t spline_order{3};
  double dropout{0.0};

  void validate() const;
};

template <typename T>
struct EncoderTrace {
  Tensor<T> vsn_weights;
  Tensor<T> tkan;
};

// embedding -> VSN -> TKAN -> causal attention -> GRN
template <typename T>
struct ContextEncoder {
  EncoderConfig cfg;
  std::size_t channels{0};
  Embedding<T> embedding;
  Vsn<T> vsn;
  Tkan<T> tkan;
  CausalAttention<T> attention;

  ContextEncoder() = default;
  ContextEncoder(ParamStore<T>& store, const std::string& prefix, const EncoderConfig& cfg,
                 std::size_t channels, Rng& rng);
  // [B, T, D] -> [B, T, H]
  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx = {},
                    EncoderTrace<T>* trace = nullptr) const;
};

}  // namespace lem::encoder
