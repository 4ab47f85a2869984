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

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "servesim/common.h"
#include "servesim/engine.h"
#include "servesim/graph.h"
#include "servesim/model.h"
#include "servesim/scheduler.h"
#include "servesim/syssim.h"
#include "servesim/workload.h"

namespace servesim {

// Directory holding models.ini, system.ini and network.ini. Taken from the
// SERVESIM_CONFIG_DIR environment variable, else the build-time default.
std::filesystem::path config_dir();

// The sixteen run parameters.
struct RunConfig {
  std::string model_name = "gpt2";
  std::int64_t npu_num = 16;
  std::int64_t max_batch = 0;
  double batch_delay = 0.0;  // milliseconds
  std::string scheduling = "orca";
  std::string parallel = "hybrid";
  std::int64_t npu_group = 1;
  double npu_mem = 40.0;  // GB
  std::string kv_manage = "vllm";
  std::string pim_type = "none";
  bool sub_batch = false;
  std::filesystem::path dataset;
  std::filesystem::path network;
  std::filesystem::path output = "output/servesim";
  bool gen = false;
  bool fast_run = false;

  // Throws ConfigError naming the parameter and its allowed values.
  void validate() const;
  ParallelMode parallel_mode() const;
  PimMode pim_mode() const;
  KvPolicy kv_policy() const;
};

// Everything that comes from config files rather than flags.
struct SystemConfig {
  ModelConfig model;
  DeviceConfig npu = DeviceConfig::npu();
  DeviceConfig pim = DeviceConfig::pim();
  NetworkConfig network;
  Seconds interval{1.0};
  std::int64_t page_size = 16;
  std::int64_t activation_tokens = 2048;
  bool reuse = true;
  PartitionCriteria criteria = PartitionCriteria::kTokenCount;
};

// Reads presets and the hardware file from `dir` and the network file named
// by `run` (default: dir/network.ini). Network defaults for npu_num and
// npu_group are applied to `run` unless the matching flag was set.
SystemConfig load_system(RunConfig& run, const std::filesystem::path& dir, bool npu_num_set,
                         bool npu_group_set);

struct ComponentTimes {
  using Ms = std::chrono::duration<double, std::milli>;
  Ms scheduler{0};
  Ms engine{0};
  Ms graphgen{0};
  Ms syssim{0};

  Ms total() const { return scheduler + engine + graphgen + syssim; }
};

struct ThroughputSample {
  double time_s = 0.0;
  double prompt_tps = 0.0;
  double gen_tps = 0.0;
};

// Buckets token counts into fixed intervals of simulated time. Tokens are
// credited at the end of the iteration that produced them.
class ThroughputTracker {
 public:
  explicit ThroughputTracker(Seconds interval);

  void record(Picoseconds end, std::int64_t prompt_tokens, std::int64_t generation_tokens);
  // One sample per interval from time zero to the last credited interval.
  std::vector<ThroughputSample> samples() const;
  std::int64_t prompt_tokens() const { return prompt_total_; }
  std::int64_t generation_tokens() const { return gen_total_; }

 private:
  Seconds interval_;
  std::vector<std::int64_t> prompt_;
  std::vector<std::int64_t> gen_;
  std::int64_t prompt_total_ = 0;
  std::int64_t gen_total_ = 0;
};

// Writes {prefix}-throughput.tsv and {prefix}-simulation-time.tsv.
void write_reports(const std::vector<ThroughputSample>& samples, const ComponentTimes& times,
                   const std::filesystem::path& prefix);
void write_throughput(std::ostream& out, const std::vector<ThroughputSample>& samples);
void write_simulation_time(std::ostream& out, const ComponentTimes& times);

struct IterationReport {
  std::int64_t index = 0;
  std::vector<RequestId> batch;
  std::size_t sub_batches = 0;
  std::vector<PageEvent> stores;  // emitted into this iteration's graph
  std::vector<PageEvent> loads;
  // Requests running when pages were grown after the iteration, and the
  // victims evicted then (in eviction order).
  std::vector<RequestId> running_before_growth;
  std::vector<PageEvent> evictions;
  IterationStats stats;
  Picoseconds latency{0};
  std::size_t graph_nodes = 0;
  std::size_t allreduce_nodes = 0;
};

struct RunSummary {
  std::int64_t iterations = 0;
  Picoseconds simulated{0};
  std::int64_t prompt_tokens = 0;
  std::int64_t generation_tokens = 0;
  ComponentTimes times;
  std::chrono::duration<double> wall{0};
};

class Simulator {
 public:
  Simulator(RunConfig run, SystemConfig system, std::vector<Request> requests);

  // Runs one batch iteration, skipping idle time as needed. Returns nullopt
  // once every request has finished.
  std::optional<IterationReport> step();
  // Steps to completion, printing one progress line per iteration to
  // `progress` when non-null.
  RunSummary run(std::ostream* progress);

  const Scheduler& scheduler() const { return scheduler_; }
  const EngineStack& engines() const { return *engines_; }
  const ComponentTimes& times() const { return times_; }
  const ThroughputTracker& throughput() const { return throughput_; }
  const ParallelismConfig& parallel() const { return parallel_; }
  const MemoryBudget& memory() const { return memory_; }
  const ExecGraph& last_graph() const { return last_graph_; }

 private:
  RunConfig run_;
  SystemConfig system_;
  ParallelismConfig parallel_;
  DeviceLayout layout_;
  DeviceSet devices_;
  MemoryBudget memory_;
  Topology topology_;
  std::unique_ptr<EngineStack> engines_;
  Scheduler scheduler_;
  ThroughputTracker throughput_;
  ComponentTimes times_;
  std::vector<PageEvent> pending_stores_;
  ExecGraph last_graph_;
  std::int64_t iterations_ = 0;
};

void print_iteration(std::ostream& out, const IterationReport& report);
void print_summary(std::ostream& out, const RunSummary& summary);

}  // namespace servesim
