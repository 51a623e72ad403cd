// Copyright 2026 The ssm-tp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>

#include "ssmtp/cache.hpp"
#include "ssmtp/scan.hpp"
#include "ssmtp/tensor.hpp"

// Single-rank selective-SSM mixer block:
//
//   in-proj -> split(ssm | gate) -> depthwise causal conv -> x-proj
//   -> unpack(delta-input | B | C) -> scan -> * silu(gate) -> out-proj
//   -> residual add
//
// This is the reference every sharded execution is compared against.

namespace ssmtp {

struct MixerConfig {
  std::size_t d_model = 64;
  std::size_t d_inner = 128;
  std::size_t d_state = 16;
  std::size_t d_conv = 4;
  std::size_t dt_rank = 4;

  // Width of the packed x-projection output: [delta-input | B | C].
  std::size_t packed_width() const { return dt_rank + 2 * d_state; }

  void validate() const {
    if (d_model == 0 || d_inner == 0 || d_state == 0 || d_conv == 0 || dt_rank == 0) {
      throw DimensionError("mixer config extents must all be positive");
    }
    if (d_inner < d_model) {
      throw DimensionError("mixer config requires d_inner >= d_model (expand >= 1)");
    }
  }

  friend bool operator==(const MixerConfig&, const MixerConfig&) = default;
};

struct MixerWeights {
  Tensor W_in;    // [d_model x 2*d_inner], columns [ssm | gate]
  Tensor conv_w;  // [d_inner x d_conv]
  Tensor conv_b;  // [d_inner]
  Tensor W_x;     // [d_inner x (dt_rank + 2*d_state)], columns [delta-input | B | C]
  Tensor W_dt;    // [dt_rank x d_inner]
  Tensor b_dt;    // [d_inner]
  Tensor A;       // [d_inner x d_state], < 0
  Tensor D_skip;  // [d_inner]
  Tensor W_out;   // [d_inner x d_model]

  static MixerWeights zeros(const MixerConfig& c) {
    return {Tensor({c.d_model, 2 * c.d_inner}),      Tensor({c.d_inner, c.d_conv}),
            Tensor({c.d_inner}),                     Tensor({c.d_inner, c.packed_width()}),
            Tensor({c.dt_rank, c.d_inner}),          Tensor({c.d_inner}),
            Tensor({c.d_inner, c.d_state}, -1.0f),   Tensor({c.d_inner}),
            Tensor({c.d_inner, c.d_model})};
  }

  // Uniform in +-1/sqrt(fan_in); A = -exp(U[0,1)); D = 1.
  template <std::uniform_random_bit_generator Rng>
  static MixerWeights random(const MixerConfig& c, Rng& rng) {
    c.validate();
    MixerWeights w = zeros(c);
    auto fill = [&rng](Tensor& t, std::size_t fan_in) {
      const float bound = 1.0f / std::sqrt(static_cast<float>(fan_in));
      std::uniform_real_distribution<float> dist(-bound, bound);
      for (float& v : t.data()) v = dist(rng);
    };
    fill(w.W_in, c.d_model);
    fill(w.conv_w, c.d_conv);
    fill(w.conv_b, c.d_conv);
    fill(w.W_x, c.d_inner);
    fill(w.W_dt, c.dt_rank);
    fill(w.b_dt, c.dt_rank);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    for (float& v : w.A.data()) v = -std::exp(unit(rng));
    for (float& v : w.D_skip.data()) v = 1.0f;
    fill(w.W_out, c.d_inner);
    return w;
  }

  static MixerWeights random(const MixerConfig& c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return random(c, rng);
  }

  std::size_t parameter_count() const {
    return W_in.size() + conv_w.size() + conv_b.size() + W_x.size() + W_dt.size() +
           b_dt.size() + A.size() + D_skip.size() + W_out.size();
  }

  void validate(const MixerConfig& c) const {
    require_shape(W_in, {c.d_model, 2 * c.d_inner}, "W_in");
    require_shape(conv_w, {c.d_inner, c.d_conv}, "conv_w");
    require_shape(conv_b, {c.d_inner}, "conv_b");
    require_shape(W_x, {c.d_inner, c.packed_width()}, "W_x");
    require_shape(W_dt, {c.dt_rank, c.d_inner}, "W_dt");
    require_shape(b_dt, {c.d_inner}, "b_dt");
    require_shape(A, {c.d_inner, c.d_state}, "A");
    require_shape(D_skip, {c.d_inner}, "D_skip");
    require_shape(W_out, {c.d_inner, c.d_model}, "W_out");
    for (float v : A.data()) {
      if (!(v < 0.0f)) throw DomainError("A must be strictly negative");
    }
  }
};

// [B x L x d] -> [B*L x d]
inline Tensor flatten_tokens(const Tensor& x) {
  require_rank(x, 3, "flatten_tokens");
  return x.reshaped({x.dim(0) * x.dim(1), x.dim(2)});
}

// Token-wise projection of a [B x L x k] activation by a [k x n] matrix.
inline Tensor project(const Tensor& x, const Tensor& w) {
  require_rank(x, 3, "project");
  const std::size_t b = x.dim(0), l = x.dim(1);
  return matmul(flatten_tokens(x), w).reshaped({b, l, w.dim(1)});
}

struct SplitProjection {
  Tensor ssm;   // [B x L x d_inner]
  Tensor gate;  // [B x L x d_inner]
};

inline SplitProjection split_in_proj(const Tensor& packed) {
  if (packed.rank() == 0 || packed.shape().back() % 2 != 0) {
    throw DimensionError("split_in_proj: last extent must be even (ssm | gate), got " +
                         shape_to_string(packed.shape()));
  }
  const std::size_t half = packed.shape().back() / 2;
  return {slice_last(packed, 0, half), slice_last(packed, half, 2 * half)};
}

struct ConvResult {
  Tensor y;           // same shape as the input
  Tensor conv_state;  // [B x C x (K-1)]
};

// Per-channel causal convolution over time. The history `conv_state` holds
// the K-1 inputs preceding x[:, 0, :].
inline ConvResult depthwise_causal_conv(const Tensor& x, const Tensor& conv_w,
                                        const Tensor& conv_b, const Tensor& conv_state) {
  require_rank(x, 3, "depthwise_causal_conv x");
  require_rank(conv_w, 2, "depthwise_causal_conv weights");
  const std::size_t batch = x.dim(0), len = x.dim(1), ch = x.dim(2), k = conv_w.dim(1);
  if (k == 0) throw DimensionError("depthwise_causal_conv: kernel width must be >= 1");
  require_shape(conv_w, {ch, k}, "depthwise_causal_conv weights");
  require_shape(conv_b, {ch}, "depthwise_causal_conv bias");
  require_shape(conv_state, {batch, ch, k - 1}, "depthwise_causal_conv state");

  const std::size_t hist = k - 1;
  ConvResult out{Tensor({batch, len, ch}), Tensor({batch, ch, hist})};
  // Input at virtual position p in [0, hist + len): history first, then x.
  auto input = [&](std::size_t b, std::size_t p, std::size_t d) {
    return p < hist ? conv_state.at(b, d, p) : x.at(b, p - hist, d);
  };
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t d = 0; d < ch; ++d) {
        float acc = 0.0f;
        for (std::size_t j = 0; j < k; ++j) acc += conv_w.at(d, j) * input(b, t + j, d);
        out.y.at(b, t, d) = acc + conv_b[d];
      }
    }
    for (std::size_t d = 0; d < ch; ++d)
      for (std::size_t j = 0; j < hist; ++j) out.conv_state.at(b, d, j) = input(b, len + j, d);
  }
  count_ops(2ull * batch * len * ch * k);
  return out;
}

// The K-1 most recent inputs after appending x to `conv_state`, per channel.
inline Tensor advance_conv_history(const Tensor& x, const Tensor& conv_state) {
  require_rank(x, 3, "advance_conv_history x");
  require_rank(conv_state, 3, "advance_conv_history state");
  const std::size_t batch = x.dim(0), len = x.dim(1), ch = x.dim(2), hist = conv_state.dim(2);
  require_shape(conv_state, {batch, ch, hist}, "advance_conv_history state");
  Tensor out({batch, ch, hist});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t d = 0; d < ch; ++d)
      for (std::size_t j = 0; j < hist; ++j) {
        const std::size_t p = len + j;
        out.at(b, d, j) = p < hist ? conv_state.at(b, d, p) : x.at(b, p - hist, d);
      }
  return out;
}

struct UnpackedParams {
  Tensor delta;  // [B x L x channels], > 0
  Tensor B_in;   // [B x L x d_state]
  Tensor C_out;  // [B x L x d_state]
};

// Slices [delta-input | B | C] and forms delta = softplus(delta-input * W_dt + b_dt).
// W_dt / b_dt may cover any subset of channels.
inline UnpackedParams unpack_ssm_params(const Tensor& packed, const Tensor& W_dt,
                                        const Tensor& b_dt, std::size_t d_state) {
  require_rank(packed, 3, "unpack_ssm_params");
  require_rank(W_dt, 2, "unpack_ssm_params W_dt");
  const std::size_t dt_rank = W_dt.dim(0);
  if (packed.dim(2) != dt_rank + 2 * d_state) {
    throw DimensionError("unpack_ssm_params: packed extent " + std::to_string(packed.dim(2)) +
                         " != dt_rank + 2*d_state = " + std::to_string(dt_rank + 2 * d_state));
  }
  require_shape(b_dt, {W_dt.dim(1)}, "unpack_ssm_params b_dt");
  const std::size_t batch = packed.dim(0), len = packed.dim(1), ch = W_dt.dim(1);

  Tensor dt = project(slice_last(packed, 0, dt_rank), W_dt);
  for (std::size_t i = 0; i < dt.size(); ++i) dt[i] = softplus(dt[i] + b_dt[i % ch]);
  count_ops(2ull * batch * len * ch);
  return {std::move(dt), slice_last(packed, dt_rank, dt_rank + d_state),
          slice_last(packed, dt_rank + d_state, dt_rank + 2 * d_state)};
}

// y * silu(gate)
inline Tensor gate_output(const Tensor& y, const Tensor& gate) {
  return multiply(y, activation(Activation::kSilu, gate));
}

struct MixerOutput {
  Tensor out;  // output projection, before the residual add
  SSMCacheEntry cache;
};

// Mixer body without the residual add, resuming from `cache`.
inline MixerOutput mixer_core(const Tensor& x, const MixerWeights& w, const SSMCacheEntry& cache) {
  require_rank(x, 3, "mixer input");
  const std::size_t batch = x.dim(0);
  const std::size_t d_inner = w.conv_w.dim(0), d_state = w.A.dim(1), d_conv = w.conv_w.dim(1);
  cache.check(batch, {0, d_inner}, d_state, d_conv);

  const SplitProjection split = split_in_proj(project(x, w.W_in));
  ConvResult conv = depthwise_causal_conv(split.ssm, w.conv_w, w.conv_b, cache.conv_state);
  UnpackedParams p = unpack_ssm_params(project(conv.y, w.W_x), w.W_dt, w.b_dt, d_state);
  ScanParams scan{std::move(p.delta), w.A, std::move(p.B_in), std::move(p.C_out), w.D_skip};
  ScanResult s = scan_full(conv.y, scan, SSMState{cache.ssm_state});
  Tensor out = project(gate_output(s.y, split.gate), w.W_out);
  return {std::move(out),
          {std::move(s.state.h), std::move(conv.conv_state), cache.layer_index, cache.channels}};
}

struct MixerResult {
  Tensor hidden;
  SSMCacheEntry cache;
};

inline MixerResult mixer_forward(const Tensor& hidden, const MixerWeights& w,
                                 const SSMCacheEntry& cache) {
  MixerOutput m = mixer_core(hidden, w, cache);
  return {add(hidden, m.out), std::move(m.cache)};
}

// Full-prompt pass from zero state; returns the populated cache.
inline MixerResult mixer_prefill(const Tensor& hidden, const MixerWeights& w,
                                 std::size_t layer_index = 0) {
  require_rank(hidden, 3, "mixer_prefill hidden");
  const std::size_t d_inner = w.conv_w.dim(0);
  return mixer_forward(hidden, w,
                       SSMCacheEntry::zeros(hidden.dim(0), {0, d_inner}, w.A.dim(1),
                                            w.conv_w.dim(1), layer_index));
}

// One-token step resuming from `cache`.
inline MixerResult mixer_decode(const Tensor& hidden_t, const MixerWeights& w,
                                const SSMCacheEntry& cache) {
  require_rank(hidden_t, 3, "mixer_decode hidden");
  if (hidden_t.dim(1) != 1) {
    throw DimensionError("mixer_decode expects a single token, got " +
                         shape_to_string(hidden_t.shape()));
  }
  return mixer_forward(hidden_t, w, cache);
}

}  // namespace ssmtp
