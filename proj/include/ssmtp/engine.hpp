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

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ssmtp/cache.hpp"
#include "ssmtp/fabric.hpp"
#include "ssmtp/mixer.hpp"
#include "ssmtp/tp.hpp"

// Toy language model built from mixer blocks, and a serving engine that
// runs it with prefill/decode in single-rank or tensor-parallel modes.
//
//   embed -> n_layers x (h + mixer(rmsnorm(h))) -> rmsnorm -> embed^T

namespace ssmtp {

using TokenBatch = std::vector<std::vector<std::int32_t>>;  // [B][L]

struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t n_layers = 2;
  MixerConfig mixer;
  std::uint64_t seed = 0;

  std::size_t d_model() const { return mixer.d_model; }

  void validate() const {
    if (vocab_size < 2) throw DimensionError("vocab_size must be >= 2");
    if (n_layers < 1) throw DimensionError("n_layers must be >= 1");
    mixer.validate();
  }

  // vocab 256, d_model 64, d_inner 128, d_state 16, d_conv 4, dt_rank 4, 2 layers.
  static ModelConfig desk_default(std::uint64_t seed) {
    ModelConfig c;
    c.seed = seed;
    return c;
  }

  CacheLayout cache_layout() const { return {n_layers, mixer.d_inner, mixer.d_state, mixer.d_conv}; }
};

inline constexpr float kRmsNormEps = 1e-5f;

// Per-token RMS normalisation over the last axis (no learned gain).
inline Tensor rmsnorm(const Tensor& x) {
  require_rank(x, 3, "rmsnorm");
  const std::size_t width = x.dim(2), rows = x.dim(0) * x.dim(1);
  Tensor out = x;
  auto d = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    float ss = 0.0f;
    for (std::size_t j = 0; j < width; ++j) ss += d[r * width + j] * d[r * width + j];
    const float scale = 1.0f / std::sqrt(ss / static_cast<float>(width) + kRmsNormEps);
    for (std::size_t j = 0; j < width; ++j) d[r * width + j] *= scale;
  }
  count_ops(3ull * x.size());
  return out;
}

struct Model {
  ModelConfig config;
  Tensor embedding;  // [vocab x d_model]
  std::vector<MixerWeights> layers;
  Tensor lm_head;    // transpose of `embedding` (tied, not counted as parameters)

  static Model build(const ModelConfig& config) {
    config.validate();
    std::mt19937_64 rng(config.seed);
    Model m{config, Tensor({config.vocab_size, config.d_model()}), {}, {}};
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (float& v : m.embedding.data()) v = dist(rng);
    m.layers.reserve(config.n_layers);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
      m.layers.push_back(MixerWeights::random(config.mixer, rng));
    }
    m.lm_head = transpose(m.embedding);
    return m;
  }

  std::size_t parameter_count() const {
    std::size_t n = embedding.size();
    for (const auto& l : layers) n += l.parameter_count();
    return n;
  }

  Tensor embed(const TokenBatch& tokens) const {
    if (tokens.empty() || tokens[0].empty()) throw DimensionError("empty token batch");
    const std::size_t batch = tokens.size(), len = tokens[0].size(), d = config.d_model();
    Tensor out({batch, len, d});
    for (std::size_t b = 0; b < batch; ++b) {
      if (tokens[b].size() != len) throw DimensionError("ragged token batch");
      for (std::size_t t = 0; t < len; ++t) {
        const auto id = tokens[b][t];
        if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
          throw DomainError("token id " + std::to_string(id) + " outside vocab of " +
                            std::to_string(config.vocab_size));
        }
        std::copy_n(embedding.data().begin() + static_cast<std::size_t>(id) * d, d,
                    out.data().begin() + (b * len + t) * d);
      }
    }
    return out;
  }
};

// Row-wise argmax with lowest-index tie-break.
inline std::vector<std::int32_t> argmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "argmax_rows");
  std::vector<std::int32_t> out(logits.dim(0));
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < logits.dim(1); ++j)
      if (logits.at(r, j) > logits.at(r, best)) best = j;
    out[r] = static_cast<std::int32_t>(best);
  }
  return out;
}

enum class ExecMode { kSingle, kTensorParallel, kNaive };

inline const char* to_string(ExecMode m) {
  switch (m) {
    case ExecMode::kSingle: return "single";
    case ExecMode::kTensorParallel: return "tp";
    case ExecMode::kNaive: return "tp-naive";
  }
  return "?";
}

struct ExecConfig {
  ExecMode mode = ExecMode::kSingle;
  int tp_degree = 1;
  bool quantized = false;  // fp16 allreduce for both block collectives
  LatencyModel latency;
  Schedule schedule = Schedule::kConcurrent;

  void validate() const {
    if (tp_degree < 1) throw RankError("tp degree must be >= 1");
    if (mode == ExecMode::kSingle && (tp_degree != 1 || quantized)) {
      throw Error("single-rank mode takes no fabric: tp degree must be 1 and quantization off");
    }
  }
};

struct ServeMetrics {
  double ttft_sim = 0.0;  // simulated clock: collectives only
  double tpot_sim = 0.0;
  double throughput_sim = 0.0;  // 0 when the simulated clock did not advance
  double ttft_wall = 0.0;
  double tpot_wall = 0.0;
  double throughput_wall = 0.0;
  std::uint64_t prefill_ops = 0;
  std::uint64_t decode_ops_per_step = 0;
  std::vector<std::size_t> rank_parameters;
  std::vector<std::size_t> rank_cache_elements;
  CollectiveStats stats;
};

struct PrefillResult {
  Tensor logits;  // [B x vocab], last position
  std::vector<ModelCache> caches;  // one per rank
  std::size_t prompt_length = 0;
  double ttft_sim = 0.0;
  double ttft_wall = 0.0;
  std::uint64_t ops = 0;
};

struct DecodeResult {
  TokenBatch tokens;           // [B][n_steps]
  std::vector<Tensor> logits;  // n_steps x [B x vocab]; entry 0 is the prefill logits
  double tpot_sim = 0.0;
  double tpot_wall = 0.0;
  std::uint64_t ops_per_step = 0;
};

struct GenerationResult {
  TokenBatch tokens;
  std::vector<Tensor> logits;
  ServeMetrics metrics;
  std::vector<ModelCache> caches;
};

class Engine {
 public:
  Engine(const Model& model, ExecConfig exec) : model_(model), exec_(exec) {
    exec_.validate();
    const int p = exec_.tp_degree;
    if (exec_.mode != ExecMode::kSingle) {
      fabric_ = std::make_unique<Fabric>(p, exec_.latency, exec_.schedule);
    }
    if (exec_.mode == ExecMode::kTensorParallel) {
      shards_.resize(static_cast<std::size_t>(p));
      for (int r = 0; r < p; ++r) {
        const ShardSpec spec = make_shard_spec(model.config.mixer.d_inner, p, r);
        for (const auto& w : model.layers) {
          shards_[static_cast<std::size_t>(r)].push_back(shard_mixer_weights(w, spec));
        }
      }
    } else if (exec_.mode == ExecMode::kNaive) {
      naive_.resize(static_cast<std::size_t>(p));
      for (int r = 0; r < p; ++r) {
        for (const auto& w : model.layers) {
          naive_[static_cast<std::size_t>(r)].push_back(naive_shard_mixer_weights(w, p, r));
        }
      }
    }
  }

  const Model& model() const { return model_; }
  const ExecConfig& exec() const { return exec_; }
  int world_size() const { return exec_.tp_degree; }
  Fabric* fabric() { return fabric_.get(); }

  std::size_t rank_parameter_count(int rank) const {
    std::size_t n = model_.embedding.size();
    switch (exec_.mode) {
      case ExecMode::kSingle: return model_.parameter_count();
      case ExecMode::kTensorParallel:
        for (const auto& s : shards_.at(static_cast<std::size_t>(rank))) n += s.parameter_count();
        return n;
      case ExecMode::kNaive:
        for (const auto& s : naive_.at(static_cast<std::size_t>(rank))) n += s.parameter_count();
        return n;
    }
    return n;
  }

  ModelCache fresh_cache(std::size_t batch, int rank) const {
    if (exec_.mode == ExecMode::kTensorParallel) {
      return init_cache(model_.config.cache_layout(), batch, exec_.tp_degree, rank);
    }
    ModelCache c = init_cache(model_.config.cache_layout(), batch, 1, 0);
    c.tp_degree = exec_.tp_degree;
    c.rank = rank;
    return c;
  }

  // Runs the prompt through every layer and returns the last-position logits
  // together with each rank's populated cache.
  PrefillResult prefill(const TokenBatch& tokens) {
    const Tensor x = model_.embed(tokens);
    PrefillResult res;
    res.prompt_length = x.dim(1);
    res.caches.resize(static_cast<std::size_t>(world_size()));
    const double sim0 = sim_time();
    const std::uint64_t ops0 = op_counter().load();
    const auto t0 = std::chrono::steady_clock::now();
    run_ranks([&](int rank) {
      ModelCache cache = fresh_cache(x.dim(0), rank);
      Tensor logits = forward(rank, x, cache);
      res.caches[static_cast<std::size_t>(rank)] = std::move(cache);
      if (rank == 0) res.logits = last_position(logits);
    });
    res.ttft_wall = seconds_since(t0);
    res.ttft_sim = sim_time() - sim0;
    res.ops = op_counter().load() - ops0;
    return res;
  }

  // Greedy continuation. Token 0 comes from the prefill logits; each further
  // token costs one cached single-token step. With `forced`, step i feeds
  // forced[b][i-1] instead of the model's own previous choice.
  DecodeResult decode(PrefillResult& state, std::size_t n_steps,
                      const TokenBatch* forced = nullptr) {
    if (state.caches.size() != static_cast<std::size_t>(world_size())) {
      throw CacheError("decode: expected one cache per rank");
    }
    const std::size_t batch = state.logits.dim(0);
    DecodeResult res;
    res.tokens.assign(batch, {});
    if (n_steps == 0) return res;
    check_forced(forced, batch, n_steps);
    const double sim0 = sim_time();
    const std::uint64_t ops0 = op_counter().load();
    const auto t0 = std::chrono::steady_clock::now();
    run_ranks([&](int rank) {
      ModelCache& cache = state.caches[static_cast<std::size_t>(rank)];
      Tensor logits = state.logits;
      std::vector<std::int32_t> next = argmax_rows(logits);
      if (rank == 0) record(res, logits, next);
      for (std::size_t step = 1; step < n_steps; ++step) {
        TokenBatch feed(batch);
        for (std::size_t b = 0; b < batch; ++b)
          feed[b] = {forced ? (*forced)[b][step - 1] : next[b]};
        logits = last_position(forward(rank, model_.embed(feed), cache));
        next = argmax_rows(logits);
        if (rank == 0) record(res, logits, next);
      }
    });
    const double steps = static_cast<double>(n_steps - 1);
    res.tpot_wall = n_steps > 1 ? seconds_since(t0) / steps : 0.0;
    res.tpot_sim = n_steps > 1 ? (sim_time() - sim0) / steps : 0.0;
    res.ops_per_step =
        n_steps > 1 ? (op_counter().load() - ops0) / static_cast<std::uint64_t>(n_steps - 1) : 0;
    state.prompt_length += n_steps - 1;
    return res;
  }

  GenerationResult generate(const TokenBatch& prompt, std::size_t n_out,
                            const TokenBatch* forced = nullptr) {
    const CollectiveStats before = stats();
    PrefillResult pre = prefill(prompt);
    DecodeResult dec = decode(pre, n_out, forced);
    GenerationResult g{std::move(dec.tokens), std::move(dec.logits), {}, std::move(pre.caches)};
    fill_metrics(g.metrics, prompt, n_out, pre.ttft_sim, dec.tpot_sim, pre.ttft_wall, dec.tpot_wall,
                 before);
    g.metrics.prefill_ops = pre.ops;
    g.metrics.decode_ops_per_step = dec.ops_per_step;
    return g;
  }

  // Generation without the cache: every token re-runs the whole sequence.
  GenerationResult generate_rescan(const TokenBatch& prompt, std::size_t n_out,
                                   const TokenBatch* forced = nullptr) {
    const std::size_t batch = prompt.size();
    check_forced(forced, batch, n_out);
    const CollectiveStats before = stats();
    GenerationResult g;
    g.tokens.assign(batch, {});
    TokenBatch seq = prompt;
    double ttft_sim = 0, ttft_wall = 0, rest_sim = 0, rest_wall = 0;
    std::uint64_t first_ops = 0, rest_ops = 0;
    for (std::size_t step = 0; step < n_out; ++step) {
      if (step > 0) {
        for (std::size_t b = 0; b < batch; ++b)
          seq[b].push_back(forced ? (*forced)[b][step - 1] : g.tokens[b].back());
      }
      PrefillResult pre = prefill(seq);
      const auto next = argmax_rows(pre.logits);
      for (std::size_t b = 0; b < batch; ++b) g.tokens[b].push_back(next[b]);
      g.logits.push_back(pre.logits);
      if (step == 0) {
        ttft_sim = pre.ttft_sim;
        ttft_wall = pre.ttft_wall;
        first_ops = pre.ops;
      } else {
        rest_sim += pre.ttft_sim;
        rest_wall += pre.ttft_wall;
        rest_ops += pre.ops;
      }
      if (step + 1 == n_out) g.caches = std::move(pre.caches);
    }
    const double steps = n_out > 1 ? static_cast<double>(n_out - 1) : 1.0;
    fill_metrics(g.metrics, prompt, n_out, ttft_sim, rest_sim / steps, ttft_wall,
                 rest_wall / steps, before);
    g.metrics.prefill_ops = first_ops;
    g.metrics.decode_ops_per_step = n_out > 1 ? rest_ops / (n_out - 1) : 0;
    return g;
  }

  CollectiveStats stats() const { return fabric_ ? fabric_->stats_snapshot() : CollectiveStats{}; }

 private:
  template <class Fn>
  void run_ranks(Fn&& fn) {
    if (fabric_) {
      fabric_->run(fn);
    } else {
      fn(0);
    }
  }

  double sim_time() const { return stats().simulated_time; }

  static double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  static void check_forced(const TokenBatch* forced, std::size_t batch, std::size_t n_steps) {
    if (!forced || n_steps < 2) return;
    if (forced->size() != batch) throw DimensionError("forced tokens: batch mismatch");
    for (const auto& row : *forced)
      if (row.size() + 1 < n_steps) throw DimensionError("forced tokens: too few per row");
  }

  static Tensor last_position(const Tensor& logits) {
    const std::size_t batch = logits.dim(0), len = logits.dim(1), vocab = logits.dim(2);
    Tensor out({batch, vocab});
    for (std::size_t b = 0; b < batch; ++b)
      std::copy_n(logits.data().begin() + (b * len + len - 1) * vocab, vocab,
                  out.data().begin() + b * vocab);
    return out;
  }

  static void record(DecodeResult& res, const Tensor& logits,
                     const std::vector<std::int32_t>& next) {
    res.logits.push_back(logits);
    for (std::size_t b = 0; b < next.size(); ++b) res.tokens[b].push_back(next[b]);
  }

  // All layers plus the head for one rank; logits for every position.
  Tensor forward(int rank, const Tensor& x, ModelCache& cache) {
    Tensor h = x;
    const auto r = static_cast<std::size_t>(rank);
    for (std::size_t l = 0; l < model_.layers.size(); ++l) {
      const Tensor normed = rmsnorm(h);
      MixerOutput m;
      switch (exec_.mode) {
        case ExecMode::kSingle:
          m = mixer_core(normed, model_.layers[l], cache.entries[l]);
          break;
        case ExecMode::kTensorParallel:
          m = tp_mixer_core(normed, shards_[r][l], cache.entries[l], *fabric_, exec_.quantized);
          break;
        case ExecMode::kNaive:
          m = naive_tp_mixer_core(normed, naive_[r][l], cache.entries[l], *fabric_,
                                  exec_.quantized);
          break;
      }
      h = add(h, m.out);
      cache.entries[l] = std::move(m.cache);
    }
    return project(rmsnorm(h), model_.lm_head);
  }

  void fill_metrics(ServeMetrics& m, const TokenBatch& prompt, std::size_t n_out, double ttft_sim,
                    double tpot_sim, double ttft_wall, double tpot_wall,
                    const CollectiveStats& before) const {
    const double tokens =
        static_cast<double>(prompt.size()) * static_cast<double>(prompt[0].size() + n_out);
    const double extra = n_out > 1 ? static_cast<double>(n_out - 1) : 0.0;
    m.ttft_sim = ttft_sim;
    m.tpot_sim = tpot_sim;
    m.ttft_wall = ttft_wall;
    m.tpot_wall = tpot_wall;
    const double total_sim = ttft_sim + tpot_sim * extra;
    const double total_wall = ttft_wall + tpot_wall * extra;
    m.throughput_sim = total_sim > 0 ? tokens / total_sim : 0.0;
    m.throughput_wall = total_wall > 0 ? tokens / total_wall : 0.0;
    for (int r = 0; r < world_size(); ++r) {
      m.rank_parameters.push_back(rank_parameter_count(r));
      m.rank_cache_elements.push_back(fresh_cache(prompt.size(), r).element_count());
    }
    const CollectiveStats after = stats();
    m.stats.allreduce_count = after.allreduce_count - before.allreduce_count;
    m.stats.quantized_count = after.quantized_count - before.quantized_count;
    m.stats.allgather_count = after.allgather_count - before.allgather_count;
    m.stats.bytes_moved = after.bytes_moved - before.bytes_moved;
    m.stats.saturation_count = after.saturation_count - before.saturation_count;
    m.stats.simulated_time = after.simulated_time - before.simulated_time;
  }

  const Model& model_;
  ExecConfig exec_;
  std::unique_ptr<Fabric> fabric_;
  std::vector<std::vector<ShardedMixerWeights>> shards_;
  std::vector<std::vector<NaiveShardedMixerWeights>> naive_;
};

// Token-wise deterministic synthetic prompt.
inline TokenBatch synthetic_prompt(std::size_t batch, std::size_t length, std::size_t vocab,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_int_distribution<std::int32_t> dist(0, static_cast<std::int32_t>(vocab) - 1);
  TokenBatch out(batch, std::vector<std::int32_t>(length));
  for (auto& row : out)
    for (auto& t : row) t = dist(rng);
  return out;
}

}  // namespace ssmtp
