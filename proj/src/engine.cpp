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

#include "servesim/engine.h"

#include <boost/container_hash/hash.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <mutex>

#include "servesim/config_file.h"

namespace servesim {

std::string_view to_string(DeviceKind kind) {
  return kind == DeviceKind::kNPU ? "NPU" : "PIM";
}

void DeviceConfig::validate() const {
  const bool ok = array_rows > 0 && array_cols > 0 && clock_hz > 0.0 && mem_bw > 0.0 &&
                  gemv_bw > 0.0 && mem_capacity > 0.0 && launch_overhead_s >= 0.0;
  if (!ok) throw ConfigError("device rates, sizes and array dims must be positive");
}

DeviceConfig npu_from_config(const ConfigFile& file) {
  file.expect_only("npu", {"array_rows", "array_cols", "clock_GHz", "mem_bw_GBps",
                           "launch_overhead_us"});
  DeviceConfig d = DeviceConfig::npu();
  d.array_rows = file.get_int("npu.array_rows", d.array_rows);
  d.array_cols = file.get_int("npu.array_cols", d.array_cols);
  d.clock_hz = file.get_double("npu.clock_GHz", d.clock_hz / kGiga) * kGiga;
  d.mem_bw = file.get_double("npu.mem_bw_GBps", d.mem_bw / kGiga) * kGiga;
  d.launch_overhead_s = file.get_double("npu.launch_overhead_us", d.launch_overhead_s * 1e6) * 1e-6;
  d.validate();
  return d;
}

DeviceConfig pim_from_config(const ConfigFile& file, const DeviceConfig& npu) {
  file.expect_only("pim", {"gemv_bw_GBps", "mem_capacity_GB", "launch_overhead_us"});
  DeviceConfig d = DeviceConfig::pim();
  d.gemv_bw = file.get_double("pim.gemv_bw_GBps", 8.0 * npu.mem_bw / kGiga) * kGiga;
  d.mem_capacity = file.get_double("pim.mem_capacity_GB", d.mem_capacity / kGiga) * kGiga;
  d.launch_overhead_s =
      file.get_double("pim.launch_overhead_us", npu.launch_overhead_s * 1e6) * 1e-6;
  d.validate();
  return d;
}

std::uint64_t systolic_tiles(const OperatorDescriptor& desc, const DeviceConfig& device) {
  return desc.heads * ceil_div(desc.m, static_cast<std::uint64_t>(device.array_rows)) *
         ceil_div(desc.n, static_cast<std::uint64_t>(device.array_cols));
}

std::uint64_t systolic_cycles(const OperatorDescriptor& desc, const DeviceConfig& device) {
  const auto fill_drain = static_cast<std::uint64_t>(device.array_rows + device.array_cols);
  return systolic_tiles(desc, device) * (desc.k + fill_drain);
}

EngineResult simulate_operator(const OperatorDescriptor& desc, const DeviceConfig& device,
                               bool closed_form) {
  EngineResult r;
  r.flops = desc.flops;
  r.bytes = desc.bytes;
  const Seconds overhead(device.launch_overhead_s);

  if (device.kind == DeviceKind::kPIM) {
    if (!is_matmul(desc.kind) || desc.m != 1) {
      throw Error(fmt::format("PIM engine only runs GEMV operators, got {} with m={}",
                              to_string(desc.kind), desc.m));
    }
    r.memory_time = Seconds(static_cast<double>(desc.bytes) / device.gemv_bw);
    r.latency = r.memory_time + overhead;
    r.bound = Bound::kMemory;
    return r;
  }

  if (is_matmul(desc.kind) && !closed_form) {
    r.compute_time =
        Seconds(static_cast<double>(systolic_cycles(desc, device)) / device.clock_hz);
  } else {
    r.compute_time = Seconds(static_cast<double>(desc.flops) / device.peak_flops());
  }
  r.memory_time = Seconds(static_cast<double>(desc.bytes) / device.mem_bw);
  r.bound = r.compute_time >= r.memory_time ? Bound::kCompute : Bound::kMemory;
  r.latency = std::max(r.compute_time, r.memory_time) + overhead;
  return r;
}

ReuseCache::Key ReuseCache::key_for(const OperatorDescriptor& desc, const DeviceConfig& device) {
  return Key{desc.kind, desc.phase, desc.m,     desc.k,     desc.n,
             desc.heads, desc.flops, desc.bytes, device};
}

std::size_t ReuseCache::KeyHash::operator()(const Key& key) const {
  std::size_t seed = 0;
  boost::hash_combine(seed, static_cast<int>(key.kind));
  boost::hash_combine(seed, static_cast<int>(key.phase));
  boost::hash_combine(seed, key.m);
  boost::hash_combine(seed, key.k);
  boost::hash_combine(seed, key.n);
  boost::hash_combine(seed, key.heads);
  boost::hash_combine(seed, key.flops);
  boost::hash_combine(seed, key.bytes);
  const DeviceConfig& d = key.device;
  boost::hash_combine(seed, static_cast<int>(d.kind));
  boost::hash_combine(seed, d.array_rows);
  boost::hash_combine(seed, d.array_cols);
  boost::hash_combine(seed, d.clock_hz);
  boost::hash_combine(seed, d.mem_bw);
  boost::hash_combine(seed, d.gemv_bw);
  boost::hash_combine(seed, d.mem_capacity);
  boost::hash_combine(seed, d.launch_overhead_s);
  return seed;
}

EngineResult ReuseCache::get_or_compute(const Key& key,
                                        const std::function<EngineResult()>& compute) {
  {
    std::shared_lock lock(mutex_);
    if (auto it = entries_.find(key); it != entries_.end()) {
      ++hits_;
      return it->second;
    }
  }
  std::unique_lock lock(mutex_);
  if (auto it = entries_.find(key); it != entries_.end()) {
    ++hits_;
    return it->second;
  }
  ++misses_;
  EngineResult result = compute();
  entries_.emplace(key, result);
  return result;
}

std::size_t ReuseCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

EngineResult cached_simulate(const OperatorDescriptor& desc, const DeviceConfig& device,
                             ReuseCache& cache, const Engine& engine) {
  return cache.get_or_compute(ReuseCache::key_for(desc, device),
                              [&] { return engine.simulate_operator(desc, device); });
}

EngineStack::EngineStack(bool reuse, bool closed_form)
    : EngineStack(std::make_shared<AnalyticalEngine>(closed_form), reuse) {}

EngineStack::EngineStack(std::shared_ptr<const Engine> engine, bool reuse)
    : engine_(std::move(engine)), reuse_(reuse) {}

EngineResult EngineStack::evaluate(const OperatorDescriptor& desc, const DeviceConfig& device) {
  auto run = [&] {
    ++invocations_;
    if (is_attention(desc.kind)) ++attention_invocations_;
    return engine_->simulate_operator(desc, device);
  };
  if (!reuse_) return run();
  return cache_.get_or_compute(ReuseCache::key_for(desc, device), run);
}

const DeviceConfig& DeviceSet::get(DeviceKind kind) const {
  if (kind == DeviceKind::kNPU) return npu;
  if (!pim) throw ConfigError("operator mapped to PIM but no PIM device is configured");
  return *pim;
}

BlockLatencies simulate_block_replicated(const IterationProfile& profile,
                                         std::span<const AttentionPlacement> attention,
                                         const DeviceSet& devices, EngineStack& engines) {
  if (attention.size() != profile.attention.size()) {
    throw Error("attention placement does not match the profile");
  }
  const std::int64_t passes = engines.reuse() ? 1 : std::max<std::int64_t>(profile.num_layers, 1);

  BlockLatencies out;
  out.embedding = engines.evaluate(profile.embedding, devices.npu);
  out.lm_head = engines.evaluate(profile.lm_head, devices.npu);
  for (std::int64_t layer = 0; layer < passes; ++layer) {
    out.pre_attention.clear();
    out.post_attention.clear();
    out.attention.clear();
    for (const auto& op : profile.pre_attention) {
      out.pre_attention.push_back(engines.evaluate(op, devices.npu));
    }
    for (std::size_t i = 0; i < profile.attention.size(); ++i) {
      const auto& a = profile.attention[i];
      out.attention.push_back({engines.evaluate(a.score, devices.get(attention[i].score)),
                               engines.evaluate(a.attend, devices.get(attention[i].attend))});
    }
    for (const auto& op : profile.post_attention) {
      out.post_attention.push_back(engines.evaluate(op, devices.npu));
    }
  }
  return out;
}

}  // namespace servesim
