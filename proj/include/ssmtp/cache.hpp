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
#include <vector>

#include "ssmtp/errors.hpp"
#include "ssmtp/tensor.hpp"

namespace ssmtp {

// Half-open global channel interval [lo, hi) over d_inner.
struct ChannelRange {
  std::size_t lo = 0;
  std::size_t hi = 0;

  std::size_t size() const noexcept { return hi - lo; }
  friend bool operator==(const ChannelRange&, const ChannelRange&) = default;
};

// Contiguous block of channels owned by `rank` under an even split.
inline ChannelRange channel_block(std::size_t d_inner, int tp_degree, int rank) {
  if (tp_degree < 1) throw ShardError("tp degree must be >= 1, got " + std::to_string(tp_degree));
  if (rank < 0 || rank >= tp_degree) {
    throw RankError("rank " + std::to_string(rank) + " out of range for tp degree " +
                    std::to_string(tp_degree));
  }
  const auto p = static_cast<std::size_t>(tp_degree);
  if (d_inner % p != 0) {
    throw ShardError("d_inner " + std::to_string(d_inner) + " is not divisible by tp degree " +
                     std::to_string(tp_degree));
  }
  const std::size_t width = d_inner / p;
  const auto r = static_cast<std::size_t>(rank);
  return {r * width, (r + 1) * width};
}

// Per-layer reusable context: final recurrent state and the last d_conv-1
// conv inputs, for the channels in `channels` only.
struct SSMCacheEntry {
  Tensor ssm_state;   // [B x channels x d_state]
  Tensor conv_state;  // [B x channels x (d_conv - 1)]
  std::size_t layer_index = 0;
  ChannelRange channels;

  static SSMCacheEntry zeros(std::size_t batch, ChannelRange channels, std::size_t d_state,
                             std::size_t d_conv, std::size_t layer_index = 0) {
    return {Tensor::zeros({batch, channels.size(), d_state}),
            Tensor::zeros({batch, channels.size(), d_conv - 1}), layer_index, channels};
  }

  std::size_t batch() const { return ssm_state.dim(0); }
  std::size_t element_count() const { return ssm_state.size() + conv_state.size(); }

  // Throws CacheError unless the entry matches the expected layout.
  void check(std::size_t batch, ChannelRange expected, std::size_t d_state,
             std::size_t d_conv) const {
    if (channels != expected) {
      throw CacheError("cache channel range [" + std::to_string(channels.lo) + "," +
                       std::to_string(channels.hi) + ") does not match [" +
                       std::to_string(expected.lo) + "," + std::to_string(expected.hi) + ")");
    }
    const Shape ssm{batch, expected.size(), d_state};
    const Shape conv{batch, expected.size(), d_conv - 1};
    if (ssm_state.shape() != ssm || conv_state.shape() != conv) {
      throw CacheError("cache layer " + std::to_string(layer_index) + " shapes " +
                       shape_to_string(ssm_state.shape()) + "/" +
                       shape_to_string(conv_state.shape()) + " do not match expected " +
                       shape_to_string(ssm) + "/" + shape_to_string(conv));
    }
  }
};

struct CacheLayout {
  std::size_t n_layers = 1;
  std::size_t d_inner = 0;
  std::size_t d_state = 0;
  std::size_t d_conv = 1;
};

// All layers' cache entries for one rank.
struct ModelCache {
  std::vector<SSMCacheEntry> entries;
  std::size_t batch = 0;
  int tp_degree = 1;
  int rank = 0;

  std::size_t element_count() const {
    std::size_t total = 0;
    for (const auto& e : entries) total += e.element_count();
    return total;
  }
};

inline ModelCache init_cache(const CacheLayout& layout, std::size_t batch, int tp_degree,
                             int rank) {
  const ChannelRange range = channel_block(layout.d_inner, tp_degree, rank);
  ModelCache cache{{}, batch, tp_degree, rank};
  cache.entries.reserve(layout.n_layers);
  for (std::size_t l = 0; l < layout.n_layers; ++l) {
    cache.entries.push_back(SSMCacheEntry::zeros(batch, range, layout.d_state, layout.d_conv, l));
  }
  return cache;
}

// Concatenate per-rank entries of one layer along the channel axis.
inline SSMCacheEntry gather_channels(const std::vector<SSMCacheEntry>& shards) {
  if (shards.empty()) throw CacheError("gather_channels of zero shards");
  const std::size_t batch = shards[0].batch();
  const std::size_t n = shards[0].ssm_state.dim(2);
  const std::size_t w = shards[0].conv_state.dim(2);
  for (std::size_t i = 1; i < shards.size(); ++i) {
    if (shards[i].channels.lo != shards[i - 1].channels.hi) {
      throw CacheError("gather_channels: shards are not contiguous");
    }
  }
  SSMCacheEntry out = SSMCacheEntry::zeros(batch, {shards.front().channels.lo,
                                                   shards.back().channels.hi},
                                           n, w + 1, shards[0].layer_index);
  for (const auto& s : shards) {
    const std::size_t off = s.channels.lo - shards.front().channels.lo;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t d = 0; d < s.channels.size(); ++d) {
        for (std::size_t k = 0; k < n; ++k) out.ssm_state.at(b, off + d, k) = s.ssm_state.at(b, d, k);
        for (std::size_t k = 0; k < w; ++k) out.conv_state.at(b, off + d, k) = s.conv_state.at(b, d, k);
      }
    }
  }
  return out;
}

}  // namespace ssmtp
