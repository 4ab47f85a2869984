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

#include "servesim/scheduler.h"

#include <fmt/format.h>

#include <algorithm>
#include <numeric>

namespace servesim {

namespace {

std::uint64_t u64(std::int64_t v) { return static_cast<std::uint64_t>(v); }

const std::vector<std::int32_t> kNoPages;

}  // namespace

MemoryBudget plan_kv_memory(const ModelConfig& model, std::int64_t tp_degree,
                            std::int64_t stages, double device_bytes, std::int64_t page_size,
                            std::int64_t activation_tokens) {
  if (tp_degree < 1 || stages < 1 || page_size < 1 || activation_tokens < 0) {
    throw ConfigError("invalid memory plan parameters");
  }
  const std::uint64_t layers_per_stage = ceil_div(u64(model.num_layers), u64(stages));
  const std::uint64_t bp = u64(model.bytes_per_param);
  const std::uint64_t d = u64(model.hidden_dim);

  MemoryBudget b;
  b.device_bytes = static_cast<std::uint64_t>(device_bytes);
  const std::uint64_t stage_weights = layers_per_stage * model.block_weight_bytes() +
                                      u64(model.vocab_size) * d * bp + 2 * d * bp;
  b.weight_bytes_per_device = ceil_div(stage_weights, u64(tp_degree));
  b.activation_reserve = 2 * u64(activation_tokens) * d * bp;
  const std::uint64_t kv_per_token = ceil_div(2 * d * bp * layers_per_stage, u64(tp_degree));
  b.page_bytes = u64(page_size) * kv_per_token;

  const std::uint64_t reserved = b.weight_bytes_per_device + b.activation_reserve;
  if (reserved >= b.device_bytes) {
    throw ConfigError(fmt::format(
        "model '{}' needs {} bytes per device for weights and workspace, only {} available",
        model.name, reserved, b.device_bytes));
  }
  b.capacity_pages = static_cast<std::int64_t>((b.device_bytes - reserved) / b.page_bytes);
  if (b.capacity_pages < 1) throw ConfigError("no room for a single KV page");
  return b;
}

KvPageTable::KvPageTable(std::int64_t page_size, std::uint64_t page_bytes,
                         std::int64_t capacity_pages)
    : page_size_(page_size), page_bytes_(page_bytes), capacity_pages_(capacity_pages) {
  if (page_size < 1 || capacity_pages < 0) throw ConfigError("invalid page table geometry");
  free_list_.resize(static_cast<std::size_t>(capacity_pages));
  // Pop from the back hands out low page numbers first.
  std::iota(free_list_.rbegin(), free_list_.rend(), 0);
}

std::int64_t KvPageTable::pages_for(std::int64_t tokens) const {
  return static_cast<std::int64_t>(ceil_div(u64(tokens), u64(page_size_)));
}

std::int64_t KvPageTable::resident_pages(RequestId id) const {
  auto it = resident_.find(id);
  return it == resident_.end() ? 0 : static_cast<std::int64_t>(it->second.size());
}

std::int64_t KvPageTable::host_pages(RequestId id) const {
  auto it = host_.find(id);
  return it == host_.end() ? 0 : it->second;
}

const std::vector<std::int32_t>& KvPageTable::page_list(RequestId id) const {
  auto it = resident_.find(id);
  return it == resident_.end() ? kNoPages : it->second;
}

bool KvPageTable::allocate(RequestId id, std::int64_t pages) {
  if (pages > free_pages()) return false;
  auto& list = resident_[id];
  for (std::int64_t i = 0; i < pages; ++i) {
    list.push_back(free_list_.back());
    free_list_.pop_back();
  }
  return true;
}

void KvPageTable::release(RequestId id) {
  if (auto it = resident_.find(id); it != resident_.end()) {
    free_list_.insert(free_list_.end(), it->second.rbegin(), it->second.rend());
    resident_.erase(it);
  }
  host_.erase(id);
}

std::int64_t KvPageTable::evict(RequestId id) {
  const std::int64_t pages = resident_pages(id);
  if (auto it = resident_.find(id); it != resident_.end()) {
    free_list_.insert(free_list_.end(), it->second.rbegin(), it->second.rend());
    resident_.erase(it);
  }
  host_[id] += pages;
  return pages;
}

bool KvPageTable::reload(RequestId id) {
  const std::int64_t pages = host_pages(id);
  if (!allocate(id, pages)) return false;
  host_.erase(id);
  return true;
}

std::string_view to_string(PimMode mode) {
  switch (mode) {
    case PimMode::kNone: return "none";
    case PimMode::kLocal: return "local";
    case PimMode::kPool: return "pool";
  }
  return "unknown";
}

double IterationStats::prompt_tps() const {
  const double s = to_seconds(end - start).count();
  return s > 0.0 ? static_cast<double>(prompt_tokens) / s : 0.0;
}

double IterationStats::generation_tps() const {
  const double s = to_seconds(end - start).count();
  return s > 0.0 ? static_cast<double>(generation_tokens) / s : 0.0;
}

Scheduler::Scheduler(SchedulerConfig config, KvPageTable pages, std::vector<Request> requests)
    : config_(config), pages_(std::move(pages)), requests_(std::move(requests)) {
  if (config_.max_batch < 0) throw ConfigError("max_batch must be >= 0");
  if (config_.batch_delay < Picoseconds(0)) throw ConfigError("batch_delay must be >= 0");
  std::vector<RequestId> order;
  for (std::size_t i = 0; i < requests_.size(); ++i) {
    if (requests_[i].id != static_cast<RequestId>(i)) {
      throw Error("request ids must be 0..n-1 in trace order");
    }
    if (requests_[i].input_len < 1 || requests_[i].output_len < 1) {
      throw Error(fmt::format("request {} has an empty prompt or output", i));
    }
    requests_[i].state = RequestState::kWaiting;
    order.push_back(requests_[i].id);
  }
  std::stable_sort(order.begin(), order.end(), [&](RequestId a, RequestId b) {
    return request(a).arrival < request(b).arrival;
  });
  waiting_.assign(order.begin(), order.end());
}

BatchEntry Scheduler::entry_for(const Request& r, Phase phase) const {
  return BatchEntry{r.id, phase, r.input_len, r.context_len};
}

bool Scheduler::batch_full(std::size_t size) const {
  return config_.max_batch > 0 && static_cast<std::int64_t>(size) >= config_.max_batch;
}

void Scheduler::admit(RequestId id) {
  admission_seq_[id] = next_admission_++;
  running_.push_back(id);
  mut(id).state = RequestState::kRunning;
}

BatchPlan Scheduler::form_batch() {
  BatchPlan plan;
  for (RequestId id : running_) plan.members.push_back(entry_for(request(id), Phase::kGeneration));

  // Reload in original admission order.
  std::sort(evicted_.begin(), evicted_.end(),
            [&](RequestId a, RequestId b) { return admission_seq_[a] < admission_seq_[b]; });
  while (!evicted_.empty() && !batch_full(plan.members.size())) {
    const RequestId id = evicted_.front();
    const std::int64_t pages = pages_.host_pages(id);
    if (!pages_.reload(id)) break;
    evicted_.erase(evicted_.begin());
    admit(id);
    plan.loads.push_back({id, PageOp::kLoad, pages, u64(pages) * pages_.page_bytes()});
    plan.members.push_back(entry_for(request(id), Phase::kGeneration));
  }

  // New work waits until every evicted request is back.
  if (evicted_.empty()) {
    std::size_t arrived = 0;
    while (arrived < waiting_.size() && request(waiting_[arrived]).arrival <= clock_) ++arrived;

    bool hold = false;
    if (arrived > 0 && config_.batch_delay > Picoseconds(0)) {
      const Picoseconds deadline =
          Picoseconds(request(waiting_.front()).arrival) + config_.batch_delay;
      const bool can_fill =
          config_.max_batch > 0 &&
          static_cast<std::int64_t>(plan.members.size() + arrived) >= config_.max_batch;
      if (clock_ < deadline && !can_fill) {
        hold = true;
        plan.next_wakeup = deadline;
        if (arrived < waiting_.size()) {
          plan.next_wakeup = std::min(deadline, Picoseconds(request(waiting_[arrived]).arrival));
        }
      }
    }

    while (!hold && !waiting_.empty() && request(waiting_.front()).arrival <= clock_ &&
           !batch_full(plan.members.size())) {
      const RequestId id = waiting_.front();
      Request& r = mut(id);
      const std::int64_t reserve_tokens =
          config_.kv_policy == KvPolicy::kMaxLen ? r.input_len + r.output_len : r.input_len;
      const std::int64_t pages = pages_.pages_for(reserve_tokens);
      if (pages > pages_.capacity_pages()) {
        throw InfeasibleError(fmt::format(
            "request {} needs {} KV pages but a device only holds {}", id, pages,
            pages_.capacity_pages()));
      }
      if (!pages_.allocate(id, pages)) break;
      waiting_.pop_front();
      admit(id);
      r.context_len = r.input_len;
      const Phase phase = config_.skip_initiation ? Phase::kGeneration : Phase::kInitiation;
      plan.members.push_back(entry_for(r, phase));
    }
  }

  if (plan.members.empty() && !plan.next_wakeup) {
    if (!evicted_.empty()) {
      throw InfeasibleError(fmt::format("request {} cannot be reloaded into an idle device",
                                        evicted_.front()));
    }
    if (!waiting_.empty()) {
      const Picoseconds next = Picoseconds(request(waiting_.front()).arrival);
      if (next > clock_) plan.next_wakeup = next;
    }
  }
  last_batch_ = plan.members;
  return plan;
}

std::vector<PageEvent> Scheduler::grow_or_evict() {
  std::vector<PageEvent> events;
  if (config_.kv_policy == KvPolicy::kMaxLen) return events;

  const std::vector<RequestId> snapshot = running_;
  for (RequestId id : snapshot) {
    if (request(id).state != RequestState::kRunning) continue;
    std::int64_t need = pages_.pages_for(request(id).context_len) - pages_.resident_pages(id);
    while (need > 0) {
      if (pages_.allocate(id, 1)) {
        --need;
        continue;
      }
      if (running_.size() == 1) {
        throw InfeasibleError(fmt::format(
            "request {} needs {} KV pages but a device only holds {}", id,
            pages_.pages_for(request(id).context_len), pages_.capacity_pages()));
      }
      const RequestId victim = running_.back();
      running_.pop_back();
      const std::int64_t pages = pages_.evict(victim);
      mut(victim).state = RequestState::kEvicted;
      evicted_.push_back(victim);
      events.push_back({victim, PageOp::kStore, pages, u64(pages) * pages_.page_bytes()});
      if (victim == id) break;
    }
  }
  return events;
}

IterationStats Scheduler::advance(Picoseconds iteration_latency) {
  IterationStats stats;
  stats.start = clock_;
  clock_ += iteration_latency;
  stats.end = clock_;

  for (const BatchEntry& e : last_batch_) {
    Request& r = mut(e.id);
    if (e.phase == Phase::kInitiation) stats.prompt_tokens += r.input_len;
    ++stats.generation_tokens;
    ++r.generated;
    r.context_len = r.input_len + r.generated;
    if (r.generated >= r.output_len) {
      r.state = RequestState::kFinished;
      r.finish_time = clock_;
      pages_.release(r.id);
      running_.erase(std::find(running_.begin(), running_.end(), r.id));
      finished_.push_back(r.id);
      stats.finished.push_back(r.id);
    }
  }
  last_batch_.clear();
  return stats;
}

void Scheduler::advance_clock_to(Picoseconds t) { clock_ = std::max(clock_, t); }

std::vector<std::vector<BatchEntry>> partition_batch(std::span<const BatchEntry> batch,
                                                     PartitionCriteria criteria, bool enabled) {
  if (batch.empty()) throw Error("cannot partition an empty batch");
  std::vector<BatchEntry> whole(batch.begin(), batch.end());
  if (!enabled || batch.size() < 2) return {whole};

  auto weight = [&](const BatchEntry& e) -> std::int64_t {
    return criteria == PartitionCriteria::kTokenCount ? e.context_len : 1;
  };
  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return weight(batch[a]) > weight(batch[b]); });

  std::vector<std::size_t> side[2];
  std::int64_t load[2] = {0, 0};
  for (std::size_t i : order) {
    const int s = load[1] < load[0] ? 1 : 0;
    side[s].push_back(i);
    load[s] += weight(batch[i]);
  }
  std::vector<std::vector<BatchEntry>> out;
  for (auto& idx : side) {
    if (idx.empty()) continue;
    std::sort(idx.begin(), idx.end());  // keep batch order inside a sub-batch
    auto& sb = out.emplace_back();
    for (std::size_t i : idx) sb.push_back(batch[i]);
  }
  return out;
}

MappingPlan map_operators(const IterationProfile& profile, const DeviceSet& devices,
                          PimMode mode) {
  if (mode != PimMode::kNone && !devices.pim) {
    throw ConfigError(fmt::format("pim_type '{}' requires a PIM device", to_string(mode)));
  }
  MappingPlan plan;
  plan.mode = mode;

  auto place = [&](const OperatorDescriptor& op) {
    const bool gemv = is_attention(op.kind) && op.phase == Phase::kGeneration && op.m == 1;
    const DeviceKind device = mode != PimMode::kNone && gemv ? DeviceKind::kPIM : DeviceKind::kNPU;
    plan.operators.push_back({op.kind, op.attention_id, device, plan.needs_transfer(device)});
    return device;
  };

  place(profile.embedding);
  for (const auto& op : profile.pre_attention) place(op);
  for (const auto& a : profile.attention) {
    AttentionPlacement p;
    p.score = place(a.score);
    p.attend = place(a.attend);
    plan.attention.push_back(p);
  }
  for (const auto& op : profile.post_attention) place(op);
  place(profile.lm_head);
  return plan;
}

}  // namespace servesim
