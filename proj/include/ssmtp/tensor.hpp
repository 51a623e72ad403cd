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

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ssmtp/errors.hpp"

namespace ssmtp {

using Shape = std::vector<std::size_t>;

inline std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_elements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// Global arithmetic-operation counter. Kernels add their nominal flop count
// in bulk, so the counter measures work, not wall time.
inline std::atomic<std::uint64_t>& op_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline void count_ops(std::uint64_t n) { op_counter().fetch_add(n, std::memory_order_relaxed); }

// Dense row-major float tensor. Copies are deep; there are no views.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0f)
      : shape_(std::move(shape)), data_(shape_elements(shape_), fill) {}

  Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_elements(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_to_string(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0f); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  float at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  float& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  float at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_elements(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " +
                           shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  // Bit-level equality (distinguishes -0 from +0, NaN payloads compare by bits).
  bool bitwise_equal(const Tensor& other) const {
    return shape_ == other.shape_ &&
           (data_.empty() ||
            std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(float)) == 0);
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

inline void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         " tensor, got " + shape_to_string(t.shape()));
  }
}

inline void require_shape(const Tensor& t, const Shape& shape, const char* what) {
  if (t.shape() != shape) {
    throw DimensionError(std::string(what) + ": expected shape " + shape_to_string(shape) +
                         ", got " + shape_to_string(t.shape()));
  }
}

// a [m x k] * b [k x n]. Each output element is summed over k in increasing
// order starting from zero, so results are reproducible bit for bit.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_to_string(a.shape()) + " * " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  float* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    float* row = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = pa[i * k + p];
      const float* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  count_ops(2ull * m * n * k);
  return out;
}

enum class Activation { kSoftplus, kSilu, kExp };

inline float softplus(float v) {
  if (v > 20.0f) return v;
  return std::log1p(std::exp(v));
}

inline float silu(float v) { return v / (1.0f + std::exp(-v)); }

inline Tensor activation(Activation kind, const Tensor& x) {
  Tensor out = x;
  for (float& v : out.data()) {
    switch (kind) {
      case Activation::kSoftplus: v = softplus(v); break;
      case Activation::kSilu: v = silu(v); break;
      case Activation::kExp: v = std::exp(v); break;
    }
  }
  count_ops(x.size());
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add shape mismatch: " + shape_to_string(a.shape()) + " + " +
                         shape_to_string(b.shape()));
  }
  Tensor out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  count_ops(a.size());
  return out;
}

inline Tensor multiply(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("multiply shape mismatch: " + shape_to_string(a.shape()) + " * " +
                         shape_to_string(b.shape()));
  }
  Tensor out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bd[i];
  count_ops(a.size());
  return out;
}

// Columns [lo, hi) of the last axis.
inline Tensor slice_last(const Tensor& t, std::size_t lo, std::size_t hi) {
  if (t.rank() == 0 || lo > hi || hi > t.shape().back()) {
    throw DimensionError("slice [" + std::to_string(lo) + "," + std::to_string(hi) +
                         ") out of range for " + shape_to_string(t.shape()));
  }
  const std::size_t width = t.shape().back();
  const std::size_t rows = width == 0 ? 0 : t.size() / width;
  Shape shape = t.shape();
  shape.back() = hi - lo;
  Tensor out(shape);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(t.data().begin() + r * width + lo, t.data().begin() + r * width + hi,
              out.data().begin() + r * (hi - lo));
  }
  return out;
}

// Concatenate along the last axis; all leading extents must agree.
inline Tensor concat_last(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_last of zero tensors");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::size_t width = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    l.pop_back();
    if (l != lead) {
      throw DimensionError("concat_last leading-extent mismatch: " +
                           shape_to_string(parts[0].shape()) + " vs " + shape_to_string(p.shape()));
    }
    width += p.shape().back();
  }
  const std::size_t rows = shape_elements(lead);
  Shape shape = lead;
  shape.push_back(width);
  Tensor out(shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape().back();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(p.data().begin() + r * w, p.data().begin() + (r + 1) * w,
                out.data().begin() + r * width + offset);
    }
    offset += w;
  }
  return out;
}

inline Tensor concat_last(std::initializer_list<Tensor> parts) {
  return concat_last(std::span<const Tensor>(parts.begin(), parts.size()));
}

// Rows [lo, hi) of the first axis.
inline Tensor slice_first(const Tensor& t, std::size_t lo, std::size_t hi) {
  if (t.rank() == 0 || lo > hi || hi > t.dim(0)) {
    throw DimensionError("row slice [" + std::to_string(lo) + "," + std::to_string(hi) +
                         ") out of range for " + shape_to_string(t.shape()));
  }
  const std::size_t stride = t.dim(0) == 0 ? 0 : t.size() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = hi - lo;
  return Tensor(shape, std::vector<float>(t.data().begin() + lo * stride,
                                          t.data().begin() + hi * stride));
}

inline Tensor concat_first(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_first of zero tensors");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<float> data;
  for (const auto& p : parts) {
    if (p.rank() != tail.size() + 1 || !std::equal(tail.begin(), tail.end(), p.shape().begin() + 1)) {
      throw DimensionError("concat_first trailing-extent mismatch: " +
                           shape_to_string(parts[0].shape()) + " vs " + shape_to_string(p.shape()));
    }
    rows += p.dim(0);
    data.insert(data.end(), p.data().begin(), p.data().end());
  }
  Shape shape{rows};
  shape.insert(shape.end(), tail.begin(), tail.end());
  return Tensor(shape, std::move(data));
}

inline Tensor transpose(const Tensor& t) {
  require_rank(t, 2, "transpose");
  const std::size_t m = t.dim(0), n = t.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = t.at(i, j);
  return out;
}

inline float max_abs(const Tensor& t) {
  float m = 0.0f;
  for (float v : t.data()) m = std::max(m, std::fabs(v));
  return m;
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff shape mismatch: " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// max|a - ref| / max|ref|, with the denominator floored at 1e-30.
inline double max_relative_error(const Tensor& test, const Tensor& ref) {
  return static_cast<double>(max_abs_diff(test, ref)) /
         std::max(static_cast<double>(max_abs(ref)), 1e-30);
}

}  // namespace ssmtp
