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

#include <algorithm>
#include <bit>
#include <cmath>
#include <random>
#include <vector>

#include "gtest/gtest.h"
#include "ssmtp/half.hpp"

namespace ssmtp {
namespace {

// Oracle: nearest finite binary16 value by exhaustive search over every
// non-negative finite bit pattern, computed in double, ties to even mantissa.
double nearest_half_oracle(double v) {
  static const std::vector<double> grid = [] {
    std::vector<double> g;
    for (int e = 0; e < 31; ++e)
      for (int m = 0; m < 1024; ++m)
        g.push_back(e == 0 ? m * std::ldexp(1.0, -24) : (1.0 + m / 1024.0) * std::ldexp(1.0, e - 15));
    return g;
  }();
  const double a = std::fabs(v);
  auto it = std::lower_bound(grid.begin(), grid.end(), a);
  double best;
  if (it == grid.begin()) {
    best = *it;
  } else if (it == grid.end()) {
    best = grid.back();
  } else {
    const double hi = *it, lo = *(it - 1);
    if (a - lo < hi - a) {
      best = lo;
    } else if (hi - a < a - lo) {
      best = hi;
    } else {
      // tie: pick the one whose index (mantissa LSB) is even
      best = ((it - grid.begin()) % 2 == 0) ? hi : lo;
    }
  }
  return std::signbit(v) ? -best : best;
}

TEST(HalfTest, ExactValuesAndSpecExample) {
  EXPECT_EQ(half::round_trip(1.0f), 1.0f);
  EXPECT_EQ(half::round_trip(2.0f), 2.0f);
  EXPECT_EQ(half::round_trip(65504.0f), 65504.0f);
  EXPECT_EQ(static_cast<double>(half::round_trip(0.1f)), 0.0999755859375);
}

TEST(HalfTest, EveryFinitePatternRoundTrips) {
  for (std::uint32_t bits = 0; bits < 0x10000; ++bits) {
    const auto h = static_cast<std::uint16_t>(bits);
    if ((h & 0x7c00) == 0x7c00) continue;  // inf / nan
    EXPECT_EQ(half::from_float(half::to_float(h)), h) << std::hex << bits;
  }
}

TEST(HalfTest, MatchesNearestRepresentableOracle) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::uint32_t> bits;
  int checked = 0;
  while (checked < 200000) {
    const float f = std::bit_cast<float>(bits(rng));
    if (!std::isfinite(f) || std::fabs(f) >= 65504.0f) continue;
    ASSERT_EQ(static_cast<double>(half::round_trip(f)), nearest_half_oracle(f)) << f;
    ++checked;
  }
  // midpoints exercise the ties-to-even rule
  for (int m = 0; m < 1023; ++m) {
    const double lo = (1.0 + m / 1024.0), hi = (1.0 + (m + 1) / 1024.0);
    const auto mid = static_cast<float>((lo + hi) / 2);
    EXPECT_EQ(static_cast<double>(half::round_trip(mid)), nearest_half_oracle(mid));
  }
}

TEST(HalfTest, OverflowBecomesInfinityUnlessSaturating) {
  EXPECT_TRUE(std::isinf(half::round_trip(70000.0f)));
  bool sat = false;
  EXPECT_EQ(half::to_float(half::from_float_saturating(70000.0f, sat)), 65504.0f);
  EXPECT_TRUE(sat);
  EXPECT_EQ(half::to_float(half::from_float_saturating(-1e9f, sat)), -65504.0f);
  EXPECT_TRUE(sat);
  half::from_float_saturating(65504.0f, sat);
  EXPECT_FALSE(sat);
}

TEST(HalfTest, AdditionIsCorrectlyRounded) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::uint32_t> pick(0, 0x7bff);
  for (int i = 0; i < 100000; ++i) {
    auto a = static_cast<std::uint16_t>(pick(rng) | ((rng() & 1) << 15));
    auto b = static_cast<std::uint16_t>(pick(rng) | ((rng() & 1) << 15));
    const double exact = static_cast<double>(half::to_float(a)) + half::to_float(b);
    if (std::fabs(exact) > 65504.0) continue;
    bool sat = false;
    const double got = half::to_float(half::add_saturating(a, b, sat));
    ASSERT_EQ(got, nearest_half_oracle(exact)) << half::to_float(a) << " + " << half::to_float(b);
  }
}

}  // namespace
}  // namespace ssmtp
