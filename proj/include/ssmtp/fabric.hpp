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
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ssmtp/errors.hpp"
#include "ssmtp/half.hpp"
#include "ssmtp/tensor.hpp"

// In-process stand-in for a multi-device interconnect.
//
// P ranks rendezvous at blocking collectives. Reductions always run in rank
// order 0..P-1 on whichever thread arrives last, so every result is
// independent of thread scheduling. Each collective also advances a
// synthetic clock by alpha + beta * bytes.

namespace ssmtp {

struct LatencyModel {
  double alpha = 10e-6;   // seconds per collective
  double beta = 0.1e-9;   // seconds per byte moved
};

struct CollectiveStats {
  std::uint64_t allreduce_count = 0;  // full-precision and quantized
  std::uint64_t quantized_count = 0;  // subset of allreduce_count
  std::uint64_t allgather_count = 0;
  std::uint64_t bytes_moved = 0;
  std::uint64_t saturation_count = 0;
  double simulated_time = 0.0;

  std::uint64_t collective_count() const { return allreduce_count + allgather_count; }
};

enum class CollectiveKind { kAllReduce, kAllReduceQuantized, kAllGather };

inline const char* to_string(CollectiveKind k) {
  switch (k) {
    case CollectiveKind::kAllReduce: return "allreduce";
    case CollectiveKind::kAllReduceQuantized: return "allreduce_fp16";
    case CollectiveKind::kAllGather: return "allgather";
  }
  return "?";
}

struct CollectiveRecord {
  std::uint64_t sequence = 0;
  CollectiveKind kind = CollectiveKind::kAllReduce;
  std::size_t elements = 0;  // per-rank payload
  std::uint64_t bytes = 0;
};

// kConcurrent: ranks run on their own threads at the same time.
// kLockstep: ranks run one at a time in round-robin rank order, handing off
// only when blocked at a collective.
enum class Schedule { kConcurrent, kLockstep };

class Fabric {
 public:
  explicit Fabric(int world_size, LatencyModel latency = {},
                  Schedule schedule = Schedule::kConcurrent)
      : world_size_(world_size),
        latency_(latency),
        schedule_(schedule),
        next_seq_(static_cast<std::size_t>(world_size), 0),
        finished_(static_cast<std::size_t>(world_size), false) {
    if (world_size < 1) throw RankError("fabric world size must be >= 1");
  }

  Fabric(const Fabric&) = delete;
  Fabric& operator=(const Fabric&) = delete;

  int world_size() const noexcept { return world_size_; }
  const LatencyModel& latency() const noexcept { return latency_; }
  Schedule schedule() const noexcept { return schedule_; }

  Tensor allreduce_sum(int rank, const Tensor& payload) {
    return collective(CollectiveKind::kAllReduce, rank, payload);
  }

  // Each contribution is rounded to binary16, summed in binary16 in rank
  // order, and widened back to float on every rank.
  Tensor allreduce_sum_quantized(int rank, const Tensor& payload) {
    return collective(CollectiveKind::kAllReduceQuantized, rank, payload);
  }

  // Concatenation along the first extent in rank order.
  Tensor allgather(int rank, const Tensor& payload) {
    return collective(CollectiveKind::kAllGather, rank, payload);
  }

  CollectiveStats stats_snapshot() const {
    std::lock_guard lk(mu_);
    return stats_;
  }

  void stats_reset() {
    std::lock_guard lk(mu_);
    stats_ = {};
    trace_.clear();
  }

  std::vector<CollectiveRecord> trace() const {
    std::lock_guard lk(mu_);
    return trace_;
  }

  // Runs fn(rank) for every rank and joins. The first exception raised by
  // any rank is rethrown after all ranks have stopped; other ranks blocked
  // in a collective are released with a ProtocolError.
  void run(const std::function<void(int)>& fn) {
    {
      std::lock_guard lk(mu_);
      failed_ = false;
      error_.clear();
      pending_.clear();
      std::fill(finished_.begin(), finished_.end(), false);
      const std::uint64_t base = *std::max_element(next_seq_.begin(), next_seq_.end());
      std::fill(next_seq_.begin(), next_seq_.end(), base);
      turn_ = 0;
      in_run_ = true;
      first_error_ = nullptr;
    }
    auto body = [&](int rank) {
      try {
        wait_for_start(rank);
        fn(rank);
        finish(rank, nullptr);
      } catch (...) {
        finish(rank, std::current_exception());
      }
    };
    if (world_size_ == 1) {
      body(0);
    } else {
      std::vector<std::thread> threads;
      threads.reserve(static_cast<std::size_t>(world_size_));
      for (int r = 0; r < world_size_; ++r) threads.emplace_back(body, r);
      for (auto& t : threads) t.join();
    }
    std::exception_ptr err;
    {
      std::lock_guard lk(mu_);
      in_run_ = false;
      err = first_error_;
    }
    if (err) std::rethrow_exception(err);
  }

 private:
  struct Pending {
    CollectiveKind kind;
    Shape shape;
    std::vector<std::optional<Tensor>> contributions;
    int arrived = 0;
    int departed = 0;
    std::optional<Tensor> result;
  };

  [[noreturn]] void fail_locked(const std::string& msg) {
    if (!failed_) {
      failed_ = true;
      error_ = msg;
    }
    cv_.notify_all();
    throw ProtocolError(msg);
  }

  void check_rank(int rank) const {
    if (rank < 0 || rank >= world_size_) {
      throw RankError("rank " + std::to_string(rank) + " is not registered with a fabric of size " +
                      std::to_string(world_size_));
    }
  }

  int next_runnable(int rank) const {
    for (int i = 1; i <= world_size_; ++i) {
      const int r = (rank + i) % world_size_;
      if (!finished_[static_cast<std::size_t>(r)]) return r;
    }
    return -1;
  }

  bool lockstep() const { return schedule_ == Schedule::kLockstep && in_run_ && world_size_ > 1; }

  void wait_for_start(int rank) {
    std::unique_lock lk(mu_);
    if (!lockstep()) return;
    cv_.wait(lk, [&] { return failed_ || turn_ == rank; });
    if (failed_) throw ProtocolError(error_);
  }

  void finish(int rank, std::exception_ptr err) {
    std::lock_guard lk(mu_);
    const auto r = static_cast<std::size_t>(rank);
    finished_[r] = true;
    if (err) {
      if (!first_error_) first_error_ = err;
      if (!failed_) {
        failed_ = true;
        error_ = "rank " + std::to_string(rank) + " aborted";
      }
    } else {
      // A rank that leaves while a collective still waits for it would hang the rest.
      for (const auto& [seq, op] : pending_) {
        if (!op.contributions[r].has_value()) {
          const std::string msg = "rank " + std::to_string(rank) +
                                  " exited without joining collective seq " + std::to_string(seq) +
                                  " (" + to_string(op.kind) + ")";
          if (!failed_) {
            failed_ = true;
            error_ = msg;
          }
          if (!first_error_) first_error_ = std::make_exception_ptr(ProtocolError(msg));
          break;
        }
      }
    }
    if (lockstep() && turn_ == rank) turn_ = next_runnable(rank);
    cv_.notify_all();
  }

  // Blocks until `ready` holds (and, in lock-step mode, this rank holds the turn).
  template <class Pred>
  void block_until(std::unique_lock<std::mutex>& lk, int rank, Pred ready) {
    if (!lockstep()) {
      cv_.wait(lk, [&] { return failed_ || ready(); });
    } else {
      while (!failed_ && !(ready() && turn_ == rank)) {
        if (turn_ == rank) {
          turn_ = next_runnable(rank);
          cv_.notify_all();
        }
        cv_.wait(lk, [&] { return failed_ || turn_ == rank; });
      }
    }
    if (failed_) throw ProtocolError(error_);
  }

  Tensor reduce_locked(Pending& op) {
    const std::size_t n = shape_elements(op.shape);
    const auto p = static_cast<std::uint64_t>(world_size_);
    std::uint64_t bytes = 0;
    Tensor result;
    switch (op.kind) {
      case CollectiveKind::kAllReduce: {
        result = *op.contributions[0];
        for (int r = 1; r < world_size_; ++r) {
          auto acc = result.data();
          auto in = op.contributions[static_cast<std::size_t>(r)]->data();
          for (std::size_t i = 0; i < n; ++i) acc[i] += in[i];
        }
        bytes = 4 * n * p;
        ++stats_.allreduce_count;
        break;
      }
      case CollectiveKind::kAllReduceQuantized: {
        std::vector<std::uint16_t> acc(n);
        bool sat = false;
        const auto& first = *op.contributions[0];
        for (std::size_t i = 0; i < n; ++i) {
          acc[i] = half::from_float_saturating(first[i], sat);
          stats_.saturation_count += sat;
        }
        for (int r = 1; r < world_size_; ++r) {
          const auto& in = *op.contributions[static_cast<std::size_t>(r)];
          for (std::size_t i = 0; i < n; ++i) {
            const std::uint16_t h = half::from_float_saturating(in[i], sat);
            stats_.saturation_count += sat;
            acc[i] = half::add_saturating(acc[i], h, sat);
            stats_.saturation_count += sat;
          }
        }
        result = Tensor(op.shape);
        for (std::size_t i = 0; i < n; ++i) result[i] = half::to_float(acc[i]);
        bytes = 2 * n * p;
        ++stats_.allreduce_count;
        ++stats_.quantized_count;
        break;
      }
      case CollectiveKind::kAllGather: {
        std::vector<Tensor> parts;
        parts.reserve(static_cast<std::size_t>(world_size_));
        for (auto& c : op.contributions) parts.push_back(*c);
        result = concat_first(parts);
        bytes = 4 * n * p;
        ++stats_.allgather_count;
        break;
      }
    }
    stats_.bytes_moved += bytes;
    stats_.simulated_time += latency_.alpha + latency_.beta * static_cast<double>(bytes);
    return result;
  }

  Tensor collective(CollectiveKind kind, int rank, const Tensor& payload) {
    check_rank(rank);
    std::unique_lock lk(mu_);
    if (failed_) throw ProtocolError(error_);
    if (kind == CollectiveKind::kAllGather && payload.rank() == 0) {
      throw DimensionError("allgather payload needs at least one extent");
    }
    const auto r = static_cast<std::size_t>(rank);
    const std::uint64_t seq = next_seq_[r]++;
    Pending& op = pending_[seq];
    if (op.contributions.empty()) {
      op.kind = kind;
      op.shape = payload.shape();
      op.contributions.resize(static_cast<std::size_t>(world_size_));
    } else if (op.kind != kind) {
      fail_locked("collective seq " + std::to_string(seq) + ": rank " + std::to_string(rank) +
                  " called " + to_string(kind) + " but peers called " + to_string(op.kind));
    } else if (op.shape != payload.shape()) {
      fail_locked("collective seq " + std::to_string(seq) + ": rank " + std::to_string(rank) +
                  " payload " + shape_to_string(payload.shape()) + " but expected " +
                  shape_to_string(op.shape));
    }
    op.contributions[r] = payload;
    if (++op.arrived == world_size_) {
      op.result = reduce_locked(op);
      trace_.push_back({seq, kind, shape_elements(op.shape),
                        (kind == CollectiveKind::kAllReduceQuantized ? 2u : 4u) *
                            shape_elements(op.shape) * static_cast<std::uint64_t>(world_size_)});
      cv_.notify_all();
    }
    block_until(lk, rank, [&] { return op.result.has_value(); });
    Tensor out = *op.result;
    if (++op.departed == world_size_) pending_.erase(seq);
    return out;
  }

  const int world_size_;
  const LatencyModel latency_;
  const Schedule schedule_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::uint64_t> next_seq_;
  std::map<std::uint64_t, Pending> pending_;
  std::vector<bool> finished_;
  CollectiveStats stats_;
  std::vector<CollectiveRecord> trace_;
  bool failed_ = false;
  std::string error_;
  bool in_run_ = false;
  int turn_ = 0;
  std::exception_ptr first_error_;
};

}  // namespace ssmtp
