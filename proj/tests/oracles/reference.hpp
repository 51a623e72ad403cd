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

// Test-only oracles. These are written directly from the defining
// equations, in double precision and with plain nested loops, and share no
// code with the library paths they check (only the Tensor container).

#include <cmath>
#include <cstddef>
#include <vector>

#include "ssmtp/engine.hpp"
#include "ssmtp/mixer.hpp"
#include "ssmtp/tensor.hpp"

namespace ssmtp::oracle {

using Vec = std::vector<double>;

inline Tensor to_tensor(const Shape& shape, const Vec& v) {
  Tensor t(shape);
  for (std::size_t i = 0; i < v.size(); ++i) t[i] = static_cast<float>(v[i]);
  return t;
}

// Brute-force selective scan: h <- exp(dt*A)*h + dt*B*u ; y = C.h + D*u.
struct ScanOut {
  Vec y;  // [B x L x Di]
  Vec h;  // [B x Di x N]
};

inline ScanOut scan(const Tensor& u, const Tensor& delta, const Tensor& A, const Tensor& Bm,
                    const Tensor& Cm, const Tensor& D, const Tensor& h0) {
  const std::size_t nb = u.dim(0), nl = u.dim(1), nd = u.dim(2), nn = A.dim(1);
  ScanOut o{Vec(nb * nl * nd), Vec(h0.data().begin(), h0.data().end())};
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t d = 0; d < nd; ++d)
      for (std::size_t t = 0; t < nl; ++t) {
        const double dt = delta.at(b, t, d), x = u.at(b, t, d);
        double y = 0;
        for (std::size_t n = 0; n < nn; ++n) {
          double& h = o.h[(b * nd + d) * nn + n];
          h = std::exp(dt * A.at(d, n)) * h + dt * Bm.at(b, t, n) * x;
          y += Cm.at(b, t, n) * h;
        }
        o.y[(b * nl + t) * nd + d] = y + D[d] * x;
      }
  return o;
}

inline double silu(double v) { return v / (1.0 + std::exp(-v)); }
inline double softplus(double v) { return v > 20.0 ? v : std::log1p(std::exp(v)); }

// Whole mixer block from zero state, straight-line, returns hidden + out.
inline Vec mixer(const Tensor& hidden, const MixerWeights& w) {
  const std::size_t nb = hidden.dim(0), nl = hidden.dim(1), dm = hidden.dim(2);
  const std::size_t di = w.conv_w.dim(0), k = w.conv_w.dim(1), ns = w.A.dim(1),
                    r = w.W_dt.dim(0);
  Vec out(hidden.data().begin(), hidden.data().end());
  for (std::size_t b = 0; b < nb; ++b) {
    // in-projection
    std::vector<Vec> xs(nl, Vec(di)), gate(nl, Vec(di));
    for (std::size_t t = 0; t < nl; ++t)
      for (std::size_t c = 0; c < 2 * di; ++c) {
        double acc = 0;
        for (std::size_t j = 0; j < dm; ++j) acc += double(hidden.at(b, t, j)) * w.W_in.at(j, c);
        (c < di ? xs[t][c] : gate[t][c - di]) = acc;
      }
    // causal depthwise conv, zero history
    std::vector<Vec> cv(nl, Vec(di));
    for (std::size_t t = 0; t < nl; ++t)
      for (std::size_t d = 0; d < di; ++d) {
        double acc = w.conv_b[d];
        for (std::size_t j = 0; j < k; ++j) {
          const long src = long(t) - long(k - 1) + long(j);
          if (src >= 0) acc += double(w.conv_w.at(d, j)) * xs[std::size_t(src)][d];
        }
        cv[t][d] = acc;
      }
    // x-projection, unpack, scan, gate, out-projection
    std::vector<Vec> h(di, Vec(ns, 0.0));
    for (std::size_t t = 0; t < nl; ++t) {
      Vec packed(r + 2 * ns, 0.0);
      for (std::size_t c = 0; c < packed.size(); ++c)
        for (std::size_t d = 0; d < di; ++d) packed[c] += cv[t][d] * w.W_x.at(d, c);
      for (std::size_t d = 0; d < di; ++d) {
        double pre = w.b_dt[d];
        for (std::size_t q = 0; q < r; ++q) pre += packed[q] * w.W_dt.at(q, d);
        const double dt = softplus(pre);
        double y = 0;
        for (std::size_t n = 0; n < ns; ++n) {
          h[d][n] = std::exp(dt * w.A.at(d, n)) * h[d][n] + dt * packed[r + n] * cv[t][d];
          y += packed[r + ns + n] * h[d][n];
        }
        y += w.D_skip[d] * cv[t][d];
        const double g = y * silu(gate[t][d]);
        for (std::size_t j = 0; j < dm; ++j) out[(b * nl + t) * dm + j] += g * w.W_out.at(d, j);
      }
    }
  }
  return out;
}

}  // namespace ssmtp::oracle
