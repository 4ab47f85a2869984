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

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "servesim/common.h"
#include "servesim/model.h"

namespace servesim {

class ConfigFile;

enum class DeviceKind { kNPU, kPIM };

std::string_view to_string(DeviceKind kind);

// Hardware parameters for one accelerator. NPU fields: array dims, clock and
// mem_bw. PIM fields: gemv_bw. Rates are per second, sizes in bytes.
struct DeviceConfig {
  DeviceKind kind = DeviceKind::kNPU;
  std::int64_t array_rows = 128;
  std::int64_t array_cols = 128;
  double clock_hz = 1e9;
  double mem_bw = 900e9;
  double gemv_bw = 8 * 900e9;
  double mem_capacity = 40e9;
  double launch_overhead_s = 2e-6;

  static DeviceConfig npu() { return DeviceConfig{}; }
  static DeviceConfig pim() {
    DeviceConfig d;
    d.kind = DeviceKind::kPIM;
    return d;
  }

  double peak_flops() const {
    return 2.0 * static_cast<double>(array_rows) * static_cast<double>(array_cols) * clock_hz;
  }
  void validate() const;
  bool operator==(const DeviceConfig&) const = default;
};

// Reads the [npu] and [pim] sections of a hardware file. Missing keys keep
// their defaults.
DeviceConfig npu_from_config(const ConfigFile& file);
DeviceConfig pim_from_config(const ConfigFile& file, const DeviceConfig& npu);

enum class Bound { kCompute, kMemory };

struct EngineResult {
  Seconds latency{0.0};
  Seconds compute_time{0.0};
  Seconds memory_time{0.0};
  Bound bound = Bound::kCompute;
  std::uint64_t flops = 0;
  std::uint64_t bytes = 0;

  bool operator==(const EngineResult&) const = default;
};

// Output-stationary tiling: every R x C output tile streams k operands and
// pays R + C cycles of fill and drain.
std::uint64_t systolic_tiles(const OperatorDescriptor& desc, const DeviceConfig& device);
std::uint64_t systolic_cycles(const OperatorDescriptor& desc, const DeviceConfig& device);

// Roofline-style cost of one operator. With `closed_form` set, matmuls use
// flops / peak_flops instead of the tile count. Throws Error when a PIM device
// is handed anything other than a GEMV (m == 1 matmul).
EngineResult simulate_operator(const OperatorDescriptor& desc, const DeviceConfig& device,
                               bool closed_form = false);

// Interface for execution engines. Implementations must be pure.
class Engine {
 public:
  virtual ~Engine() = default;
  virtual EngineResult simulate_operator(const OperatorDescriptor& desc,
                                         const DeviceConfig& device) const = 0;
};

class AnalyticalEngine final : public Engine {
 public:
  explicit AnalyticalEngine(bool closed_form = false) : closed_form_(closed_form) {}

  EngineResult simulate_operator(const OperatorDescriptor& desc,
                                 const DeviceConfig& device) const override {
    return servesim::simulate_operator(desc, device, closed_form_);
  }

 private:
  bool closed_form_;
};

// Memoizes engine results keyed by operator shape and device.
class ReuseCache {
 public:
  struct Key {
    OpKind kind;
    Phase phase;
    std::uint64_t m, k, n, heads, flops, bytes;
    DeviceConfig device;
    bool operator==(const Key&) const = default;
  };

  static Key key_for(const OperatorDescriptor& desc, const DeviceConfig& device);

  // Returns the stored result or runs `compute` once, stores and returns it.
  // Concurrent callers with the same key see a single computation.
  EngineResult get_or_compute(const Key& key, const std::function<EngineResult()>& compute);

  std::uint64_t hits() const { return hits_.load(); }
  std::uint64_t misses() const { return misses_.load(); }
  std::size_t size() const;

 private:
  struct KeyHash {
    std::size_t operator()(const Key& key) const;
  };

  mutable std::shared_mutex mutex_;
  std::unordered_map<Key, EngineResult, KeyHash> entries_;
  std::atomic<std::uint64_t> hits_{0};
  std::atomic<std::uint64_t> misses_{0};
};

EngineResult cached_simulate(const OperatorDescriptor& desc, const DeviceConfig& device,
                             ReuseCache& cache, const Engine& engine);

// Engines plus the reuse cache. With reuse off every request reaches the
// engine. `invocations` counts engine calls.
class EngineStack {
 public:
  explicit EngineStack(bool reuse = true, bool closed_form = false);
  EngineStack(std::shared_ptr<const Engine> engine, bool reuse);

  EngineResult evaluate(const OperatorDescriptor& desc, const DeviceConfig& device);

  bool reuse() const { return reuse_; }
  std::uint64_t invocations() const { return invocations_.load(); }
  std::uint64_t attention_invocations() const { return attention_invocations_.load(); }
  std::uint64_t other_invocations() const { return invocations() - attention_invocations(); }
  const ReuseCache& cache() const { return cache_; }

 private:
  std::shared_ptr<const Engine> engine_;
  bool reuse_;
  ReuseCache cache_;
  std::atomic<std::uint64_t> invocations_{0};
  std::atomic<std::uint64_t> attention_invocations_{0};
};

struct DeviceSet {
  DeviceConfig npu = DeviceConfig::npu();
  std::optional<DeviceConfig> pim;

  const DeviceConfig& get(DeviceKind kind) const;
};

// Where each half of a request's attention runs.
struct AttentionPlacement {
  DeviceKind score = DeviceKind::kNPU;
  DeviceKind attend = DeviceKind::kNPU;
};

struct AttentionLatency {
  EngineResult score;
  EngineResult attend;
};

// Engine results for one IterationProfile; block entries apply to every layer.
struct BlockLatencies {
  EngineResult embedding;
  std::vector<EngineResult> pre_attention;
  std::vector<AttentionLatency> attention;
  std::vector<EngineResult> post_attention;
  EngineResult lm_head;
};

// Non-attention block operators run on the NPU. With reuse on, the
// representative block is evaluated once and shared by all layers; with reuse
// off every layer is evaluated separately.
BlockLatencies simulate_block_replicated(const IterationProfile& profile,
                                         std::span<const AttentionPlacement> attention,
                                         const DeviceSet& devices, EngineStack& engines);

}  // namespace servesim
