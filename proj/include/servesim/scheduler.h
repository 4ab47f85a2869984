/* Copyright 2026 The servesim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "servesim/common.h"
#include "servesim/engine.h"
#include "servesim/model.h"
#include "servesim/workload.h"

namespace servesim {

// Per-device memory split for the KV cache.
struct MemoryBudget {
  std::uint64_t device_bytes = 0;
  std::uint64_t weight_bytes_per_device = 0;
  std::uint64_t activation_reserve = 0;
  std::uint64_t page_bytes = 0;
  std::int64_t capacity_pages = 0;
};

// KV pages are sharded over `tp_degree` ranks and, under pipelining, over
// stages of ceil(L / stages) layers; the budget is for the fullest device.
// The activation workspace is 2 * activation_tokens * d * bytes_per_param.
MemoryBudget plan_kv_memory(const ModelConfig& model, std::int64_t tp_degree,
                            std::int64_t stages, double device_bytes, std::int64_t page_size,
                            std::int64_t activation_tokens);

// Paged KV allocator. Every NPU holds the same slice of each request's KV, so
// one table stands for all devices; counts are per device.
class KvPageTable {
 public:
  KvPageTable(std::int64_t page_size, std::uint64_t page_bytes, std::int64_t capacity_pages);

  std::int64_t page_size() const { return page_size_; }
  std::uint64_t page_bytes() const { return page_bytes_; }
  std::int64_t capacity_pages() const { return capacity_pages_; }
  std::int64_t free_pages() const { return static_cast<std::int64_t>(free_list_.size()); }
  std::int64_t used_pages() const { return capacity_pages_ - free_pages(); }

  std::int64_t pages_for(std::int64_t tokens) const;
  std::int64_t resident_pages(RequestId id) const;
  std::int64_t host_pages(RequestId id) const;
  const std::vector<std::int32_t>& page_list(RequestId id) const;

  // Returns false, leaving the table untouched, when `pages` are not free.
  bool allocate(RequestId id, std::int64_t pages);
  void release(RequestId id);
  // Moves all resident pages of `id` to the host; returns the page count.
  std::int64_t evict(RequestId id);
  // Brings host pages of `id` back; false if they do not fit.
  bool reload(RequestId id);

 private:
  std::int64_t page_size_;
  std::uint64_t page_bytes_;
  std::int64_t capacity_pages_;
  std::vector<std::int32_t> free_list_;
  std::map<RequestId, std::vector<std::int32_t>> resident_;
  std::map<RequestId, std::int64_t> host_;
};

enum class KvPolicy { kPaged, kMaxLen };
enum class PartitionCriteria { kTokenCount, kRequestCount };
enum class PimMode { kNone, kLocal, kPool };

std::string_view to_string(PimMode mode);

enum class PageOp { kStore, kLoad };

// KV pages moved between one request's device memory and the host.
struct PageEvent {
  RequestId request = 0;
  PageOp op = PageOp::kStore;
  std::int64_t pages = 0;
  // Per device: pages * page_bytes.
  std::uint64_t bytes = 0;
};

struct BatchPlan {
  // Running requests in admission order, then reloaded, then newly admitted.
  std::vector<BatchEntry> members;
  std::vector<std::vector<BatchEntry>> sub_batches;
  PartitionCriteria criteria = PartitionCriteria::kTokenCount;
  std::vector<PageEvent> loads;
  // When `members` is empty: the earliest time anything can change.
  std::optional<Picoseconds> next_wakeup;

  bool empty() const { return members.empty(); }
};

struct SchedulerConfig {
  // 0 means unlimited.
  std::int64_t max_batch = 0;
  Picoseconds batch_delay{0};
  KvPolicy kv_policy = KvPolicy::kPaged;
  // Requests skip initiation and start in generation with their prompt cached.
  bool skip_initiation = false;
};

struct IterationStats {
  Picoseconds start{0};
  Picoseconds end{0};
  std::int64_t prompt_tokens = 0;
  std::int64_t generation_tokens = 0;
  std::vector<RequestId> finished;

  double prompt_tps() const;
  double generation_tps() const;
};

// Iteration-level scheduler state: the clock, request queues and KV pages.
class Scheduler {
 public:
  Scheduler(SchedulerConfig config, KvPageTable pages, std::vector<Request> requests);

  // Continuous batching: keeps every running request, reloads evicted ones
  // (oldest admission first) and then admits arrived requests in arrival
  // order while the batch cap and free pages allow. Throws InfeasibleError if
  // an arrived prompt can never fit.
  BatchPlan form_batch();

  // Allocates a page for every running request whose context crossed a page
  // boundary, evicting the most recently admitted requests when short.
  std::vector<PageEvent> grow_or_evict();

  // Closes the iteration formed by the last form_batch: advances the clock,
  // credits one token to each member and retires finished requests.
  IterationStats advance(Picoseconds iteration_latency);

  // Moves the idle clock forward (never backwards).
  void advance_clock_to(Picoseconds t);

  Picoseconds clock() const { return clock_; }
  const std::vector<Request>& requests() const { return requests_; }
  const Request& request(RequestId id) const { return requests_.at(static_cast<std::size_t>(id)); }
  const KvPageTable& pages() const { return pages_; }
  const SchedulerConfig& config() const { return config_; }

  const std::deque<RequestId>& waiting() const { return waiting_; }
  const std::vector<RequestId>& running() const { return running_; }
  const std::vector<RequestId>& evicted() const { return evicted_; }
  const std::vector<RequestId>& finished() const { return finished_; }
  std::uint64_t admission_seq(RequestId id) const { return admission_seq_.at(id); }

  bool done() const { return finished_.size() == requests_.size(); }

 private:
  Request& mut(RequestId id) { return requests_.at(static_cast<std::size_t>(id)); }
  BatchEntry entry_for(const Request& r, Phase phase) const;
  bool batch_full(std::size_t size) const;
  void admit(RequestId id);

  SchedulerConfig config_;
  KvPageTable pages_;
  std::vector<Request> requests_;
  Picoseconds clock_{0};

  std::deque<RequestId> waiting_;
  std::vector<RequestId> running_;  // admission order
  std::vector<RequestId> evicted_;
  std::vector<RequestId> finished_;
  std::map<RequestId, std::uint64_t> admission_seq_;
  std::uint64_t next_admission_ = 0;

  std::vector<BatchEntry> last_batch_;
};

// Splits a batch into two sub-batches balancing `criteria` (greedy,
// longest first) when enabled; otherwise, or when one side would be empty,
// returns the whole batch as one sub-batch.
std::vector<std::vector<BatchEntry>> partition_batch(std::span<const BatchEntry> batch,
                                                     PartitionCriteria criteria, bool enabled);

struct MappedOperator {
  OpKind kind = OpKind::kLayerNorm;
  std::optional<RequestId> attention_id;
  DeviceKind device = DeviceKind::kNPU;
  bool transfer = false;
};

struct MappingPlan {
  PimMode mode = PimMode::kNone;
  // Parallel to IterationProfile::attention.
  std::vector<AttentionPlacement> attention;
  // Every operator of one block plus Embedding and LMHead, profile order.
  std::vector<MappedOperator> operators;

  // True when a PIM-mapped operator needs activations moved to and from a
  // PIM pool.
  bool needs_transfer(DeviceKind device) const {
    return mode == PimMode::kPool && device == DeviceKind::kPIM;
  }
};

// Generation-phase Score/Attend go to PIM when a PIM mode is set; everything
// else runs on the NPU.
MappingPlan map_operators(const IterationProfile& profile, const DeviceSet& devices,
                          PimMode mode);

}  // namespace servesim
