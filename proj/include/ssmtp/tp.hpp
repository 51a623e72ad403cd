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

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ssmtp/cache.hpp"
#include "ssmtp/fabric.hpp"
#include "ssmtp/mixer.hpp"

// Tensor-parallel execution of the mixer block.
//
// Channel-aligned sharding: every rank owns a contiguous block of d_inner
// channels. The in-projection is column-sharded per logical field (its SSM
// block and its gate block are cut separately), so the conv and the scan run
// on local channels with no communication. The x-projection and the
// out-projection are row-sharded and produce partial sums, which are the
// only two collectives per block:
//
//   #1  allreduce of the packed [delta-input | B | C] projection
//   #2  allreduce of the out-projection at the residual boundary
//
// B and C are read from the reduced packed vector; delta is formed locally
// from the rank's W_dt columns, so it stays sharded with its channels.
//
// The naive baseline slices each packed tensor uniformly along one extent
// without regard to field boundaries and needs four collectives.

namespace ssmtp {

struct ShardSpec {
  int tp_degree = 1;
  int rank = 0;
  ChannelRange channels;
};

inline ShardSpec make_shard_spec(std::size_t d_inner, int tp_degree, int rank) {
  return {tp_degree, rank, channel_block(d_inner, tp_degree, rank)};
}

struct ShardedMixerWeights {
  ShardSpec spec;
  Tensor W_in;    // [d_model x 2*w]: [local ssm channels | local gate channels]
  Tensor conv_w;  // [w x d_conv]
  Tensor conv_b;  // [w]
  Tensor W_x;     // [w x packed]: row shard, yields partial packed projections
  Tensor W_dt;    // [dt_rank x w]
  Tensor b_dt;    // [w]
  Tensor A;       // [w x d_state]
  Tensor D_skip;  // [w]
  Tensor W_out;   // [w x d_model]: row shard, yields partial outputs

  std::size_t parameter_count() const {
    return W_in.size() + conv_w.size() + conv_b.size() + W_x.size() + W_dt.size() +
           b_dt.size() + A.size() + D_skip.size() + W_out.size();
  }
};

inline ShardedMixerWeights shard_mixer_weights(const MixerWeights& w, const ShardSpec& spec) {
  const std::size_t d_inner = w.conv_w.dim(0);
  const ChannelRange expect = channel_block(d_inner, spec.tp_degree, spec.rank);
  if (expect != spec.channels) {
    throw ShardError("shard spec channel range does not match an even split of d_inner");
  }
  const auto [lo, hi] = spec.channels;
  return {spec,
          concat_last({slice_last(w.W_in, lo, hi), slice_last(w.W_in, d_inner + lo, d_inner + hi)}),
          slice_first(w.conv_w, lo, hi),
          slice_first(w.conv_b, lo, hi),
          slice_first(w.W_x, lo, hi),
          slice_last(w.W_dt, lo, hi),
          slice_first(w.b_dt, lo, hi),
          slice_first(w.A, lo, hi),
          slice_first(w.D_skip, lo, hi),
          slice_first(w.W_out, lo, hi)};
}

inline Tensor tp_allreduce(Fabric& fabric, int rank, const Tensor& partial, bool quantized) {
  return quantized ? fabric.allreduce_sum_quantized(rank, partial)
                   : fabric.allreduce_sum(rank, partial);
}

// Rank-local mixer body; returns the reduced out-projection (replicated).
inline MixerOutput tp_mixer_core(const Tensor& x, const ShardedMixerWeights& sw,
                                 const SSMCacheEntry& cache, Fabric& fabric,
                                 bool quantized = false) {
  require_rank(x, 3, "tp mixer input");
  const int rank = sw.spec.rank;
  const std::size_t d_state = sw.A.dim(1), d_conv = sw.conv_w.dim(1);
  cache.check(x.dim(0), sw.spec.channels, d_state, d_conv);

  const SplitProjection split = split_in_proj(project(x, sw.W_in));
  ConvResult conv = depthwise_causal_conv(split.ssm, sw.conv_w, sw.conv_b, cache.conv_state);
  const Tensor packed = tp_allreduce(fabric, rank, project(conv.y, sw.W_x), quantized);
  UnpackedParams p = unpack_ssm_params(packed, sw.W_dt, sw.b_dt, d_state);
  ScanParams scan{std::move(p.delta), sw.A, std::move(p.B_in), std::move(p.C_out), sw.D_skip};
  ScanResult s = scan_full(conv.y, scan, SSMState{cache.ssm_state});
  Tensor partial = project(gate_output(s.y, split.gate), sw.W_out);
  Tensor out = tp_allreduce(fabric, rank, partial, quantized);
  return {std::move(out),
          {std::move(s.state.h), std::move(conv.conv_state), cache.layer_index, cache.channels}};
}

// hidden is replicated on entry and on exit. Exactly two allreduces.
inline MixerResult tp_mixer_forward(const Tensor& hidden, const ShardedMixerWeights& sw,
                                    const SSMCacheEntry& cache, Fabric& fabric,
                                    bool quantized = false) {
  MixerOutput m = tp_mixer_core(hidden, sw, cache, fabric, quantized);
  return {add(hidden, m.out), std::move(m.cache)};
}

inline MixerResult tp_mixer_decode(const Tensor& hidden_t, const ShardedMixerWeights& sw,
                                   const SSMCacheEntry& cache, Fabric& fabric, bool quantized) {
  require_rank(hidden_t, 3, "tp_mixer_decode hidden");
  if (hidden_t.dim(1) != 1) {
    throw DimensionError("tp_mixer_decode expects a single token, got " +
                         shape_to_string(hidden_t.shape()));
  }
  return tp_mixer_forward(hidden_t, sw, cache, fabric, quantized);
}

// ---------------------------------------------------------------------------
// Naive baseline

struct NaiveShardedMixerWeights {
  int tp_degree = 1;
  int rank = 0;
  ChannelRange packed_cols;  // uniform block of W_in's 2*d_inner columns
  ChannelRange rows;         // uniform block of d_inner rows
  Tensor W_in;               // [d_model x 2*d_inner/P], may straddle the ssm|gate boundary
  Tensor conv_w;             // [d_inner/P x d_conv]
  Tensor conv_b;
  Tensor W_x;                // [d_inner/P x packed]
  Tensor W_out;              // [d_inner/P x d_model]
  // Replicated.
  Tensor W_dt;
  Tensor b_dt;
  Tensor A;
  Tensor D_skip;

  std::size_t parameter_count() const {
    return W_in.size() + conv_w.size() + conv_b.size() + W_x.size() + W_out.size() +
           W_dt.size() + b_dt.size() + A.size() + D_skip.size();
  }
};

inline NaiveShardedMixerWeights naive_shard_mixer_weights(const MixerWeights& w, int tp_degree,
                                                          int rank) {
  const std::size_t d_inner = w.conv_w.dim(0);
  const ChannelRange cols = channel_block(2 * d_inner, tp_degree, rank);
  const ChannelRange rows = channel_block(d_inner, tp_degree, rank);
  return {tp_degree,
          rank,
          cols,
          rows,
          slice_last(w.W_in, cols.lo, cols.hi),
          slice_first(w.conv_w, rows.lo, rows.hi),
          slice_first(w.conv_b, rows.lo, rows.hi),
          slice_first(w.W_x, rows.lo, rows.hi),
          slice_first(w.W_out, rows.lo, rows.hi),
          w.W_dt,
          w.b_dt,
          w.A,
          w.D_skip};
}

// Reassembles a last-axis-sharded [B x L x w] activation into [B x L x w*P].
inline Tensor allgather_last(Fabric& fabric, int rank, const Tensor& local) {
  require_rank(local, 3, "allgather_last");
  const std::size_t b = local.dim(0), l = local.dim(1);
  Tensor gathered = fabric.allgather(rank, transpose(flatten_tokens(local)));
  return transpose(gathered).reshaped({b, l, gathered.dim(0)});
}

inline Tensor slice_channels(const Tensor& t, ChannelRange r) {
  require_rank(t, 3, "slice_channels");
  const std::size_t batch = t.dim(0), width = t.dim(2);
  Tensor out({batch, r.size(), width});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t d = 0; d < r.size(); ++d)
      for (std::size_t k = 0; k < width; ++k) out.at(b, d, k) = t.at(b, r.lo + d, k);
  return out;
}

// Four collectives: (i) allgather after the in-projection, (ii) allgather of
// the conv output, (iii) allreduce of the packed projection, (iv) allreduce
// of the out-projection. The cache holds every channel on every rank.
inline MixerOutput naive_tp_mixer_core(const Tensor& x, const NaiveShardedMixerWeights& nw,
                                       const SSMCacheEntry& cache, Fabric& fabric,
                                       bool quantized = false) {
  require_rank(x, 3, "naive tp mixer input");
  const int rank = nw.rank;
  const std::size_t d_inner = nw.A.dim(0), d_state = nw.A.dim(1), d_conv = nw.conv_w.dim(1);
  cache.check(x.dim(0), {0, d_inner}, d_state, d_conv);

  const Tensor packed_in = allgather_last(fabric, rank, project(x, nw.W_in));  // (i)
  const SplitProjection split = split_in_proj(packed_in);
  ConvResult conv_local = depthwise_causal_conv(slice_last(split.ssm, nw.rows.lo, nw.rows.hi),
                                                nw.conv_w, nw.conv_b,
                                                slice_channels(cache.conv_state, nw.rows));
  const Tensor conv = allgather_last(fabric, rank, conv_local.y);  // (ii)
  const Tensor packed = tp_allreduce(
      fabric, rank, project(slice_last(conv, nw.rows.lo, nw.rows.hi), nw.W_x), quantized);  // (iii)
  UnpackedParams p = unpack_ssm_params(packed, nw.W_dt, nw.b_dt, d_state);
  ScanParams scan{std::move(p.delta), nw.A, std::move(p.B_in), std::move(p.C_out), nw.D_skip};
  ScanResult s = scan_full(conv, scan, SSMState{cache.ssm_state});
  const Tensor gated = gate_output(s.y, split.gate);
  Tensor out = tp_allreduce(fabric, rank,
                            project(slice_last(gated, nw.rows.lo, nw.rows.hi), nw.W_out),
                            quantized);  // (iv)
  return {std::move(out),
          {std::move(s.state.h), advance_conv_history(split.ssm, cache.conv_state),
           cache.layer_index, cache.channels}};
}

inline MixerResult naive_tp_mixer_forward(const Tensor& hidden, const NaiveShardedMixerWeights& nw,
                                          const SSMCacheEntry& cache, Fabric& fabric,
                                          bool quantized = false) {
  MixerOutput m = naive_tp_mixer_core(hidden, nw, cache, fabric, quantized);
  return {add(hidden, m.out), std::move(m.cache)};
}

}  // namespace ssmtp
