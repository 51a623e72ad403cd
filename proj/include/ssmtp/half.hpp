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

#include <bit>
#include <cmath>
#include <cstdint>

// IEEE 754 binary16 conversions used as the wire format of the quantized
// collective. All rounding is round-to-nearest-even.

namespace ssmtp::half {

inline constexpr float kMax = 65504.0f;
inline constexpr std::uint16_t kMaxBits = 0x7bff;

inline std::uint16_t from_float(float f) {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint16_t sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
  const std::uint32_t abs = x & 0x7fffffffu;

  if (abs >= 0x7f800000u) {  // inf / nan
    return sign | 0x7c00u | (abs > 0x7f800000u ? 0x0200u : 0u);
  }
  if (abs >= 0x477ff000u) {  // >= 65520 rounds to infinity
    return sign | 0x7c00u;
  }
  if (abs < 0x38800000u) {  // below 2^-14: half subnormal or zero
    // Scaling by 2^24 is exact; the integer part is the subnormal mantissa.
    const float scaled = std::bit_cast<float>(abs) * 16777216.0f;
    const auto mant = static_cast<std::uint32_t>(std::nearbyint(scaled));
    return sign | static_cast<std::uint16_t>(mant);
  }
  const std::uint32_t exp = ((abs >> 23) - 127u + 15u);
  const std::uint32_t mant = abs & 0x7fffffu;
  std::uint32_t h = (exp << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;  // carry may bump the exponent
  return sign | static_cast<std::uint16_t>(h);
}

inline float to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1fu;
  const std::uint32_t mant = h & 0x3ffu;
  if (exp == 0) {
    const float mag = static_cast<float>(mant) * 5.9604644775390625e-8f;  // 2^-24
    return sign ? -mag : mag;
  }
  if (exp == 31) return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
  return std::bit_cast<float>(sign | ((exp - 15u + 127u) << 23) | (mant << 13));
}

inline float round_trip(float f) { return to_float(from_float(f)); }

// Finite-range conversion: magnitudes above kMax clamp to +-kMax and set
// `saturated`.
inline std::uint16_t from_float_saturating(float f, bool& saturated) {
  saturated = false;
  if (f > kMax) {
    saturated = true;
    return kMaxBits;
  }
  if (f < -kMax) {
    saturated = true;
    return 0x8000u | kMaxBits;
  }
  return from_float(f);
}

// Half-precision addition. The float sum of two halves rounded once more to
// half equals the correctly rounded half sum (binary32 has more than 2p+2
// bits for p = 11).
inline std::uint16_t add_saturating(std::uint16_t a, std::uint16_t b, bool& saturated) {
  return from_float_saturating(to_float(a) + to_float(b), saturated);
}

}  // namespace ssmtp::half
