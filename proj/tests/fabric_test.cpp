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

#include <atomic>
#include <chrono>
#include <thread>
#include <random>
#include <vector>

#include "gtest/gtest.h"
#include "ssmtp/fabric.hpp"

namespace ssmtp {
namespace {

// Runs `body(rank)` on a fresh fabric and returns each rank's result.
template <class Body>
std::vector<Tensor> on_ranks(Fabric& f, Body body) {
  std::vector<Tensor> out(static_cast<std::size_t>(f.world_size()));
  f.run([&](int r) { out[static_cast<std::size_t>(r)] = body(r); });
  return out;
}

std::vector<Tensor> random_payloads(int p, std::size_t n, std::mt19937& rng) {
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<Tensor> out;
  for (int r = 0; r < p; ++r) {
    Tensor t({n});
    for (float& v : t.data()) v = u(rng);
    out.push_back(t);
  }
  return out;
}

TEST(FabricTest, SingleRankIsIdentity) {
  Fabric f(1);
  const Tensor x({3}, {1, -2, 3});
  const auto r = on_ranks(f, [&](int rank) { return f.allreduce_sum(rank, x); });
  EXPECT_TRUE(r[0].bitwise_equal(x));
  EXPECT_EQ(f.stats_snapshot().allreduce_count, 1u);
}

TEST(FabricTest, HandComputedSum) {
  Fabric f(2);
  const std::vector<Tensor> in{Tensor({2}, {1, 2}), Tensor({2}, {10, 20})};
  const auto r = on_ranks(f, [&](int rank) { return f.allreduce_sum(rank, in[rank]); });
  for (const auto& t : r) EXPECT_EQ(t.values(), (std::vector<float>{11, 22}));
}

TEST(FabricTest, ReducesInRankOrder) {
  std::mt19937 rng(3);
  Fabric f(4);
  const auto in = random_payloads(4, 257, rng);
  const auto r = on_ranks(f, [&](int rank) { return f.allreduce_sum(rank, in[rank]); });
  for (std::size_t i = 0; i < 257; ++i) {
    const float want = ((in[0][i] + in[1][i]) + in[2][i]) + in[3][i];
    for (const auto& t : r) ASSERT_EQ(t[i], want);
  }
}

TEST(FabricTest, QuantizedSumRoundsEachTerm) {
  Fabric f(2);
  const auto r = on_ranks(
      f, [&](int rank) { return f.allreduce_sum_quantized(rank, Tensor({1}, {0.1f})); });
  EXPECT_EQ(r[0][0], 0.199951171875f);
  EXPECT_EQ(r[1][0], 0.199951171875f);
}

TEST(FabricTest, QuantizedSumSaturates) {
  Fabric f(2);
  const auto r = on_ranks(
      f, [&](int rank) { return f.allreduce_sum_quantized(rank, Tensor({1}, {60000.0f})); });
  EXPECT_EQ(r[0][0], 65504.0f);
  EXPECT_EQ(f.stats_snapshot().saturation_count, 1u);
}

TEST(FabricTest, QuantizedHalvesBytes) {
  Fabric full(4), quant(4);
  const Tensor x({10});
  on_ranks(full, [&](int rank) { return full.allreduce_sum(rank, x); });
  on_ranks(quant, [&](int rank) { return quant.allreduce_sum_quantized(rank, x); });
  EXPECT_EQ(full.stats_snapshot().bytes_moved, 160u);
  EXPECT_EQ(quant.stats_snapshot().bytes_moved, 80u);
  EXPECT_EQ(quant.stats_snapshot().quantized_count, 1u);
  EXPECT_EQ(quant.stats_snapshot().allreduce_count, 1u);
}

TEST(FabricTest, AllgatherConcatenatesInRankOrder) {
  Fabric f(3);
  const auto r = on_ranks(f, [&](int rank) {
    return f.allgather(rank, Tensor({1, 2}, {float(rank), float(rank) + 0.5f}));
  });
  for (const auto& t : r) {
    EXPECT_EQ(t.shape(), (Shape{3, 2}));
    EXPECT_EQ(t.values(), (std::vector<float>{0, 0.5f, 1, 1.5f, 2, 2.5f}));
  }
  EXPECT_EQ(f.stats_snapshot().allgather_count, 1u);
  EXPECT_EQ(f.stats_snapshot().bytes_moved, 4u * 2 * 3);
}

TEST(FabricTest, StatsAndSimulatedTime) {
  const LatencyModel lat{2e-6, 1e-9};
  Fabric f(2, lat);
  on_ranks(f, [&](int rank) { return f.allreduce_sum(rank, Tensor({8})); });
  const auto s = f.stats_snapshot();
  EXPECT_EQ(s.bytes_moved, 64u);
  EXPECT_DOUBLE_EQ(s.simulated_time, 2e-6 + 64e-9);
  ASSERT_EQ(f.trace().size(), 1u);
  EXPECT_EQ(f.trace()[0].bytes, 64u);
  f.stats_reset();
  EXPECT_EQ(f.stats_snapshot().collective_count(), 0u);
  EXPECT_TRUE(f.trace().empty());
}

TEST(FabricTest, ManySequentialCollectives) {
  Fabric f(4);
  const auto r = on_ranks(f, [&](int rank) {
    Tensor acc({1}, {1.0f});
    for (int i = 0; i < 200; ++i) {
      acc = f.allreduce_sum(rank, Tensor({1}, {acc[0] / 4.0f + float(rank == i % 4)}));
    }
    return acc;
  });
  for (const auto& t : r) EXPECT_TRUE(t.bitwise_equal(r[0]));
  EXPECT_EQ(f.stats_snapshot().allreduce_count, 200u);
}

TEST(FabricTest, KindMismatchIsProtocolError) {
  Fabric f(2);
  EXPECT_THROW(f.run([&](int rank) {
    if (rank == 0) f.allreduce_sum(rank, Tensor({2}));
    else f.allgather(rank, Tensor({2}));
  }),
               ProtocolError);
}

TEST(FabricTest, ShapeMismatchIsProtocolError) {
  Fabric f(2);
  EXPECT_THROW(f.run([&](int rank) { f.allreduce_sum(rank, Tensor({rank + 1u})); }),
               ProtocolError);
}

TEST(FabricTest, RankLeavingEarlyIsProtocolError) {
  Fabric f(3);
  EXPECT_THROW(f.run([&](int rank) {
    if (rank != 2) f.allreduce_sum(rank, Tensor({2}));
  }),
               ProtocolError);
}

TEST(FabricTest, RankExceptionPropagates) {
  Fabric f(2);
  EXPECT_THROW(f.run([&](int rank) {
    if (rank == 1) throw DomainError("boom");
    f.allreduce_sum(rank, Tensor({2}));
  }),
               DomainError);
}

TEST(FabricTest, UnknownRankIsRejected) {
  Fabric f(2);
  EXPECT_THROW(f.allreduce_sum(2, Tensor({1})), RankError);
  EXPECT_THROW(Fabric(0), RankError);
}

TEST(FabricTest, LockstepRunsOneRankAtATimeWithSameResults) {
  std::mt19937 rng(11);
  const auto in = random_payloads(4, 33, rng);
  auto body = [&](Fabric& f) {
    return on_ranks(f, [&](int rank) {
      Tensor x = in[static_cast<std::size_t>(rank)];
      for (int i = 0; i < 5; ++i) x = f.allreduce_sum(rank, multiply(x, in[rank]));
      return f.allgather(rank, x);
    });
  };
  Fabric a(4), b(4, {}, Schedule::kLockstep);
  const auto ra = body(a);
  std::atomic<int> active{0}, peak{0};
  auto busy = [&] {
    const int now = ++active;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    --active;
  };
  b.run([&](int rank) {
    busy();
    b.allreduce_sum(rank, in[static_cast<std::size_t>(rank)]);
    busy();
  });
  EXPECT_EQ(peak.load(), 1);
  Fabric c(4, {}, Schedule::kLockstep);
  const auto rc = body(c);
  for (std::size_t r = 0; r < 4; ++r) EXPECT_TRUE(ra[r].bitwise_equal(rc[r]));
}

TEST(FabricTest, QuantizedErrorIsBoundedRelativeToPayloadScale) {
  // Each term rounds to half (<= 2^-11 relative) and each of the P-1 adds
  // rounds once more; relative to max|exact sum| the error stays well under 1e-2.
  std::mt19937 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const int p = 2 + trial % 7;
    const auto in = random_payloads(p, 64, rng);
    Fabric f(p);
    std::vector<Tensor> exact(static_cast<std::size_t>(p)), quant(static_cast<std::size_t>(p));
    f.run([&](int r) {
      exact[r] = f.allreduce_sum(r, in[r]);
      quant[r] = f.allreduce_sum_quantized(r, in[r]);
    });
    ASSERT_LE(max_relative_error(quant[0], exact[0]), 1e-2) << "P=" << p;
  }
}

}  // namespace
}  // namespace ssmtp
