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

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "ssmtp/tensor.hpp"

namespace ssmtp {

// Agreement between two logit streams, one row per position.
struct AgreementReport {
  double top1_match = 0.0;      // fraction of rows with equal argmax
  double top5_unordered = 0.0;  // mean |top-k(ref) ∩ top-k(test)| / k
  double top5_ordered = 0.0;    // fraction of rows whose ordered top-k lists are identical
  std::size_t positions = 0;
};

// Indices of the k largest entries of one row, descending by value, ties to
// the lower index.
inline std::vector<std::size_t> topk_indices(std::span<const float> row, std::size_t k) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  k = std::min(k, row.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return row[a] > row[b] || (row[a] == row[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

inline AgreementReport topk_agreement(const Tensor& ref, const Tensor& test, std::size_t k = 5) {
  require_rank(ref, 2, "topk_agreement reference");
  if (ref.shape() != test.shape()) {
    throw DimensionError("topk_agreement stream mismatch: " + shape_to_string(ref.shape()) +
                         " vs " + shape_to_string(test.shape()));
  }
  AgreementReport rep;
  rep.positions = ref.dim(0);
  if (rep.positions == 0) return rep;
  const std::size_t vocab = ref.dim(1);
  std::size_t top1 = 0, ordered = 0;
  double overlap = 0.0;
  for (std::size_t t = 0; t < rep.positions; ++t) {
    const auto a = topk_indices(ref.data().subspan(t * vocab, vocab), k);
    const auto b = topk_indices(test.data().subspan(t * vocab, vocab), k);
    top1 += a.front() == b.front();
    ordered += a == b;
    std::size_t common = 0;
    for (std::size_t i : a) common += std::find(b.begin(), b.end(), i) != b.end();
    overlap += static_cast<double>(common) / static_cast<double>(a.size());
  }
  const auto n = static_cast<double>(rep.positions);
  rep.top1_match = static_cast<double>(top1) / n;
  rep.top5_unordered = overlap / n;
  rep.top5_ordered = static_cast<double>(ordered) / n;
  return rep;
}

// Stack a per-step stream of [B x vocab] logits into one [(steps*B) x vocab] tensor.
inline Tensor stack_stream(const std::vector<Tensor>& steps) { return concat_first(steps); }

}  // namespace ssmtp
