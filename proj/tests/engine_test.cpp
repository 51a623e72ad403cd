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

#include <vector>

#include "gtest/gtest.h"
#include "ssmtp/agreement.hpp"
#include "ssmtp/engine.hpp"

namespace ssmtp {
namespace {

ExecConfig tp(int p, bool quantized = false) {
  ExecConfig e;
  e.mode = ExecMode::kTensorParallel;
  e.tp_degree = p;
  e.quantized = quantized;
  return e;
}

TEST(ModelTest, BuildIsDeterministic) {
  const Model a = Model::build(ModelConfig::desk_default(5));
  const Model b = Model::build(ModelConfig::desk_default(5));
  const Model c = Model::build(ModelConfig::desk_default(6));
  EXPECT_TRUE(a.embedding.bitwise_equal(b.embedding));
  EXPECT_TRUE(a.layers[1].W_x.bitwise_equal(b.layers[1].W_x));
  EXPECT_FALSE(a.embedding.bitwise_equal(c.embedding));
  for (const auto& l : a.layers)
    for (float v : l.A.data()) EXPECT_LT(v, 0.0f);
}

TEST(ModelTest, ParameterCountClosedForm) {
  const Model m = Model::build(ModelConfig::desk_default(0));
  const std::size_t dm = 64, di = 128, n = 16, k = 4, r = 4;
  const std::size_t per_layer = dm * 2 * di + di * k + di + di * (r + 2 * n) + r * di + di +
                                di * n + di + di * dm;
  EXPECT_EQ(per_layer, 32640u);
  EXPECT_EQ(m.parameter_count(), 256 * dm + 2 * per_layer);
}

TEST(ModelTest, EmbedRejectsOutOfVocab) {
  const Model m = Model::build(ModelConfig::desk_default(0));
  EXPECT_THROW(m.embed({{1, 256}}), DomainError);
  EXPECT_THROW(m.embed({{1, -1}}), DomainError);
  EXPECT_THROW(m.embed({{1, 2}, {3}}), DimensionError);
}

TEST(ModelTest, RmsNormHasUnitRms) {
  const Tensor y = rmsnorm(Tensor({1, 1, 4}, {2, 2, 2, 2}));
  for (float v : y.data()) EXPECT_NEAR(v, 1.0f, 1e-5f);
}

TEST(EngineTest, ArgmaxTiesGoToLowestIndex) {
  EXPECT_EQ(argmax_rows(Tensor({2, 3}, {1, 3, 3, 5, 0, 5})), (std::vector<std::int32_t>{1, 0}));
}

TEST(EngineTest, ExecConfigValidation) {
  const Model m = Model::build(ModelConfig::desk_default(0));
  ExecConfig e;
  e.tp_degree = 2;
  EXPECT_THROW(Engine(m, e), Error);
  EXPECT_THROW(Engine(m, tp(3)), ShardError);
}

TEST(EngineTest, SingleRankMatchesTpDegreeOneBitwise) {
  const Model m = Model::build(ModelConfig::desk_default(1));
  const TokenBatch prompt = synthetic_prompt(2, 16, 256, 1);
  Engine single(m, {}), one(m, tp(1));
  const auto a = single.generate(prompt, 8), b = one.generate(prompt, 8);
  EXPECT_EQ(a.tokens, b.tokens);
  for (std::size_t i = 0; i < a.logits.size(); ++i)
    EXPECT_TRUE(a.logits[i].bitwise_equal(b.logits[i]));
}

TEST(EngineTest, TensorParallelParity) {
  const Model m = Model::build(ModelConfig::desk_default(2));
  const TokenBatch prompt = synthetic_prompt(2, 16, 256, 2);
  Engine single(m, {});
  const auto ref = single.generate(prompt, 16);
  for (int p : {2, 4}) {
    Engine eng(m, tp(p));
    const auto got = eng.generate(prompt, 16, &ref.tokens);
    EXPECT_LE(max_relative_error(stack_stream(got.logits), stack_stream(ref.logits)), 1e-4);
    EXPECT_EQ(got.metrics.stats.allreduce_count, 2u * 2 * 16);
    EXPECT_EQ(got.metrics.stats.allgather_count, 0u);
  }
}

TEST(EngineTest, FreeRunningTokensAgreeWithSingleRank) {
  std::size_t same = 0, total = 0;
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const Model m = Model::build(ModelConfig::desk_default(seed));
    const TokenBatch prompt = synthetic_prompt(2, 16, 256, seed);
    Engine single(m, {});
    const auto ref = single.generate(prompt, 32);
    for (int p : {2, 4}) {
      Engine eng(m, tp(p));
      const auto got = eng.generate(prompt, 32);
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 32; ++t) {
          same += got.tokens[b][t] == ref.tokens[b][t];
          ++total;
        }
    }
  }
  EXPECT_GE(static_cast<double>(same) / static_cast<double>(total), 0.99);
}

TEST(EngineTest, CachedDecodeEqualsRescanBitwise) {
  const Model m = Model::build(ModelConfig::desk_default(8));
  const TokenBatch prompt = synthetic_prompt(2, 8, 256, 8);
  Engine eng(m, {});
  const auto cached = eng.generate(prompt, 8);
  const auto rescan = eng.generate_rescan(prompt, 8);
  EXPECT_EQ(cached.tokens, rescan.tokens);
  for (std::size_t i = 0; i < 8; ++i)
    EXPECT_TRUE(cached.logits[i].bitwise_equal(rescan.logits[i])) << "step " << i;
}

TEST(EngineTest, PrefillOpsScaleLinearlyInPromptLength) {
  const Model m = Model::build(ModelConfig::desk_default(0));
  Engine eng(m, {});
  const auto a = eng.prefill(synthetic_prompt(1, 32, 256, 0));
  const auto b = eng.prefill(synthetic_prompt(1, 64, 256, 0));
  EXPECT_EQ(b.ops, 2 * a.ops);
}

TEST(EngineTest, DecodeCostIndependentOfPromptLength) {
  const Model m = Model::build(ModelConfig::desk_default(0));
  Engine eng(m, {});
  const auto a = eng.generate(synthetic_prompt(1, 16, 256, 0), 4);
  const auto b = eng.generate(synthetic_prompt(1, 128, 256, 0), 4);
  EXPECT_EQ(a.metrics.decode_ops_per_step, b.metrics.decode_ops_per_step);
  EXPECT_GT(a.metrics.decode_ops_per_step, 0u);
}

TEST(EngineTest, DecodeAdvancesPromptLengthAndKeepsCacheShape) {
  const Model m = Model::build(ModelConfig::desk_default(0));
  Engine eng(m, tp(2));
  PrefillResult pre = eng.prefill(synthetic_prompt(2, 5, 256, 0));
  EXPECT_EQ(pre.logits.shape(), (Shape{2, 256}));
  const auto dec = eng.decode(pre, 3);
  EXPECT_EQ(pre.prompt_length, 7u);
  EXPECT_EQ(dec.logits.size(), 3u);
  EXPECT_EQ(pre.caches[1].entries[0].channels, (ChannelRange{64, 128}));
}

TEST(EngineTest, MetricsAreReported) {
  const Model m = Model::build(ModelConfig::desk_default(0));
  Engine eng(m, tp(4));
  const auto g = eng.generate(synthetic_prompt(2, 8, 256, 0), 4);
  EXPECT_GT(g.metrics.ttft_sim, 0.0);
  EXPECT_GT(g.metrics.tpot_sim, 0.0);
  EXPECT_GT(g.metrics.throughput_sim, 0.0);
  ASSERT_EQ(g.metrics.rank_parameters.size(), 4u);
  EXPECT_EQ(g.metrics.rank_parameters[0], 16384u + 65280u / 4);
  EXPECT_EQ(g.metrics.rank_cache_elements[0], 2u * 2 * 32 * (16 + 3));
}

TEST(EngineTest, NaiveModeMatchesAndCostsMore) {
  const Model m = Model::build(ModelConfig::desk_default(9));
  const TokenBatch prompt = synthetic_prompt(2, 8, 256, 9);
  Engine single(m, {});
  const auto ref = single.generate(prompt, 4);
  ExecConfig n = tp(2);
  n.mode = ExecMode::kNaive;
  Engine naive(m, n), opt(m, tp(2));
  const auto a = naive.generate(prompt, 4, &ref.tokens);
  const auto b = opt.generate(prompt, 4, &ref.tokens);
  EXPECT_LE(max_relative_error(stack_stream(a.logits), stack_stream(ref.logits)), 1e-4);
  EXPECT_EQ(a.metrics.stats.collective_count(), 4u * 2 * 4);
  EXPECT_GT(a.metrics.stats.simulated_time, b.metrics.stats.simulated_time);
}

TEST(EngineTest, QuantizedLowersSimulatedStepTime) {
  const Model m = Model::build(ModelConfig::desk_default(0));
  const TokenBatch prompt = synthetic_prompt(2, 8, 256, 0);
  Engine full(m, tp(2)), quant(m, tp(2, true));
  const auto a = full.generate(prompt, 4), b = quant.generate(prompt, 4);
  EXPECT_LT(b.metrics.tpot_sim, a.metrics.tpot_sim);
  EXPECT_EQ(2 * b.metrics.stats.bytes_moved, a.metrics.stats.bytes_moved);
}

}  // namespace
}  // namespace ssmtp
