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
#include <cstddef>
#include <string>

#include "ssmtp/tensor.hpp"

// Selective-scan recurrence.
//
//   A_bar[b,d,n] = exp(delta[b,d] * A[d,n])           (zero-order hold)
//   Bu[b,d,n]    = delta[b,d] * B[b,n]                (Euler)
//   h'[b,d,n]    = A_bar * h + Bu * u[b,d]
//   y[b,d]       = sum_n C[b,n] * h'[b,d,n] + D[d] * u[b,d]
//
// scan_full is the literal left fold of scan_step, so splitting a sequence at
// any point and carrying the state across gives bit-identical results.

namespace ssmtp {

// Recurrent state h, shape [batch x channels x d_state].
struct SSMState {
  Tensor h;

  static SSMState zeros(std::size_t batch, std::size_t channels, std::size_t d_state) {
    return {Tensor::zeros({batch, channels, d_state})};
  }
};

// Token-dependent fields for one position t.
struct TokenParams {
  Tensor delta;  // [B x Di]
  Tensor B_in;   // [B x N]
  Tensor C_out;  // [B x N]
};

struct ScanParams {
  Tensor delta;   // [B x L x Di], > 0
  Tensor A;       // [Di x N], < 0
  Tensor B_in;    // [B x L x N]
  Tensor C_out;   // [B x L x N]
  Tensor D_skip;  // [Di]

  std::size_t batch() const { return delta.dim(0); }
  std::size_t length() const { return delta.dim(1); }
  std::size_t channels() const { return A.dim(0); }
  std::size_t d_state() const { return A.dim(1); }

  void validate() const {
    require_rank(delta, 3, "scan delta");
    require_rank(A, 2, "scan A");
    const std::size_t b = delta.dim(0), l = delta.dim(1), di = delta.dim(2);
    require_shape(A, {di, A.dim(1)}, "scan A");
    require_shape(B_in, {b, l, A.dim(1)}, "scan B");
    require_shape(C_out, {b, l, A.dim(1)}, "scan C");
    require_shape(D_skip, {di}, "scan D");
  }

  TokenParams token(std::size_t t) const {
    const std::size_t b = batch(), di = channels(), n = d_state(), l = length();
    TokenParams p{Tensor({b, di}), Tensor({b, n}), Tensor({b, n})};
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t d = 0; d < di; ++d) p.delta.at(r, d) = delta[(r * l + t) * di + d];
      for (std::size_t k = 0; k < n; ++k) {
        p.B_in.at(r, k) = B_in[(r * l + t) * n + k];
        p.C_out.at(r, k) = C_out[(r * l + t) * n + k];
      }
    }
    return p;
  }
};

struct Discretized {
  Tensor A_bar;     // [B x Di x N]
  Tensor Bu_factor; // [B x Di x N]
};

inline Discretized discretize(const Tensor& delta_t, const Tensor& A, const Tensor& B_t) {
  require_rank(delta_t, 2, "discretize delta");
  require_rank(A, 2, "discretize A");
  require_rank(B_t, 2, "discretize B");
  const std::size_t batch = delta_t.dim(0), di = delta_t.dim(1), n = A.dim(1);
  if (A.dim(0) != di || B_t.dim(0) != batch || B_t.dim(1) != n) {
    throw DimensionError("discretize shape mismatch: delta " + shape_to_string(delta_t.shape()) +
                         ", A " + shape_to_string(A.shape()) + ", B " +
                         shape_to_string(B_t.shape()));
  }
  Discretized out{Tensor({batch, di, n}), Tensor({batch, di, n})};
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t d = 0; d < di; ++d) {
      const float dt = delta_t.at(b, d);
      if (!(dt > 0.0f)) {
        throw DomainError("discretize: step size must be positive, got " + std::to_string(dt) +
                          " at (" + std::to_string(b) + "," + std::to_string(d) + ")");
      }
      for (std::size_t k = 0; k < n; ++k) {
        out.A_bar.at(b, d, k) = std::exp(dt * A.at(d, k));
        out.Bu_factor.at(b, d, k) = dt * B_t.at(b, k);
      }
    }
  }
  count_ops(3ull * batch * di * n);
  return out;
}

struct StepResult {
  Tensor y;  // [B x Di]
  SSMState state;
};

inline StepResult scan_step(const Tensor& u_t, const TokenParams& p, const Tensor& A,
                            const Tensor& D_skip, const SSMState& state) {
  require_rank(u_t, 2, "scan_step u");
  const std::size_t batch = u_t.dim(0), di = u_t.dim(1);
  require_shape(p.delta, {batch, di}, "scan_step delta");
  require_rank(A, 2, "scan_step A");
  const std::size_t n = A.dim(1);
  require_shape(A, {di, n}, "scan_step A");
  require_shape(p.C_out, {batch, n}, "scan_step C");
  require_shape(D_skip, {di}, "scan_step D");
  require_shape(state.h, {batch, di, n}, "scan_step state");

  const Discretized disc = discretize(p.delta, A, p.B_in);
  StepResult out{Tensor({batch, di}), SSMState{Tensor({batch, di, n})}};
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t d = 0; d < di; ++d) {
      const float u = u_t.at(b, d);
      float acc = 0.0f;
      for (std::size_t k = 0; k < n; ++k) {
        const float h = disc.A_bar.at(b, d, k) * state.h.at(b, d, k) + disc.Bu_factor.at(b, d, k) * u;
        out.state.h.at(b, d, k) = h;
        acc += p.C_out.at(b, k) * h;
      }
      out.y.at(b, d) = acc + D_skip[d] * u;
    }
  }
  count_ops(5ull * batch * di * n + 2ull * batch * di);
  return out;
}

struct ScanResult {
  Tensor y;  // [B x L x Di]
  SSMState state;
};

inline ScanResult scan_full(const Tensor& u, const ScanParams& params, const SSMState& state0) {
  params.validate();
  require_shape(u, params.delta.shape(), "scan_full u");
  const std::size_t batch = params.batch(), len = params.length(), di = params.channels();
  require_shape(state0.h, {batch, di, params.d_state()}, "scan_full state");

  ScanResult out{Tensor({batch, len, di}), state0};
  for (std::size_t t = 0; t < len; ++t) {
    Tensor u_t({batch, di});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t d = 0; d < di; ++d) u_t.at(b, d) = u.at(b, t, d);
    StepResult step = scan_step(u_t, params.token(t), params.A, params.D_skip, out.state);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t d = 0; d < di; ++d) out.y.at(b, t, d) = step.y.at(b, d);
    out.state = std::move(step.state);
  }
  return out;
}

}  // namespace ssmtp
