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

#include "servesim/simulator.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <ostream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "servesim/config_file.h"

#ifndef SERVESIM_CONFIG_DIR
#define SERVESIM_CONFIG_DIR "configs"
#endif

namespace servesim {
namespace {

using Clock = std::chrono::steady_clock;

template <typename T>
void check_choice(std::string_view name, const std::string& value,
                  std::initializer_list<T> allowed) {
  if (std::find(allowed.begin(), allowed.end(), value) != allowed.end()) return;
  throw ConfigError(fmt::format("{}: '{}' is not one of {{{}}}", name, value,
                                fmt::join(allowed, ", ")));
}

// Adds the wall time of its scope to `sink`.
class ScopedTimer {
 public:
  explicit ScopedTimer(ComponentTimes::Ms& sink) : sink_(sink), start_(Clock::now()) {}
  ~ScopedTimer() { sink_ += Clock::now() - start_; }
  ScopedTimer(const ScopedTimer&) = delete;
  ScopedTimer& operator=(const ScopedTimer&) = delete;

 private:
  ComponentTimes::Ms& sink_;
  Clock::time_point start_;
};

ParallelismConfig parallelism_for(const RunConfig& run, const NetworkConfig& net) {
  ParallelismConfig p;
  p.mode = run.parallel_mode();
  p.npu_num = run.npu_num;
  p.npu_group = run.npu_group;
  p.attention = net.attention;
  return p;
}

DeviceLayout layout_for(const RunConfig& run, const NetworkConfig& net) {
  DeviceLayout l;
  l.npu_num = run.npu_num;
  l.pim = run.pim_mode();
  l.pim_pool_size = net.pim_pool_size;
  if (l.pim == PimMode::kPool && l.pim_pool_size < 1) {
    throw ConfigError("pim_type 'pool' needs pim_num >= 1 in the network config");
  }
  return l;
}

DeviceSet devices_for(const RunConfig& run, const SystemConfig& sys) {
  DeviceSet d;
  d.npu = sys.npu;
  d.npu.mem_capacity = run.npu_mem * kGiga;
  if (run.pim_mode() != PimMode::kNone) d.pim = sys.pim;
  return d;
}

MemoryBudget budget_for(const RunConfig& run, const SystemConfig& sys,
                        const ParallelismConfig& par) {
  return plan_kv_memory(sys.model, par.tp_degree(), par.stages(), run.npu_mem * kGiga,
                        sys.page_size, sys.activation_tokens);
}

SchedulerConfig scheduler_config(const RunConfig& run) {
  SchedulerConfig c;
  c.max_batch = run.max_batch;
  c.batch_delay = to_picos(Seconds(run.batch_delay * 1e-3));
  c.kv_policy = run.kv_policy();
  c.skip_initiation = run.gen;
  return c;
}

}  // namespace

std::filesystem::path config_dir() {
  if (const char* env = std::getenv("SERVESIM_CONFIG_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return SERVESIM_CONFIG_DIR;
}

void RunConfig::validate() const {
  if (model_name.empty()) throw ConfigError("model_name must not be empty");
  if (npu_num < 1) throw ConfigError(fmt::format("npu_num must be >= 1, got {}", npu_num));
  if (max_batch < 0) throw ConfigError(fmt::format("max_batch must be >= 0, got {}", max_batch));
  if (!(batch_delay >= 0.0) || std::isinf(batch_delay)) {
    throw ConfigError(fmt::format("batch_delay must be a finite value >= 0, got {}", batch_delay));
  }
  check_choice<std::string_view>("scheduling", scheduling, {"orca"});
  check_choice<std::string_view>("parallel", parallel, {"pipeline", "tensor", "hybrid"});
  if (npu_group < 1) throw ConfigError(fmt::format("npu_group must be >= 1, got {}", npu_group));
  if (!(npu_mem > 0.0) || std::isinf(npu_mem)) {
    throw ConfigError(fmt::format("npu_mem must be a positive number of GB, got {}", npu_mem));
  }
  check_choice<std::string_view>("kv_manage", kv_manage, {"vllm", "maxlen"});
  check_choice<std::string_view>("pim_type", pim_type, {"none", "local", "pool"});
  if (dataset.empty()) throw ConfigError("dataset: a trace file is required");
  if (output.empty()) throw ConfigError("output must not be empty");
}

ParallelMode RunConfig::parallel_mode() const {
  if (parallel == "tensor") return ParallelMode::kTensor;
  if (parallel == "pipeline") return ParallelMode::kPipeline;
  return ParallelMode::kHybrid;
}

PimMode RunConfig::pim_mode() const {
  if (pim_type == "local") return PimMode::kLocal;
  if (pim_type == "pool") return PimMode::kPool;
  return PimMode::kNone;
}

KvPolicy RunConfig::kv_policy() const {
  return kv_manage == "maxlen" ? KvPolicy::kMaxLen : KvPolicy::kPaged;
}

SystemConfig load_system(RunConfig& run, const std::filesystem::path& dir, bool npu_num_set,
                         bool npu_group_set) {
  SystemConfig sys;
  const auto presets = load_model_presets(dir / "models.ini");
  auto it = presets.find(run.model_name);
  if (it == presets.end()) {
    std::vector<std::string> names;
    for (const auto& [name, m] : presets) names.push_back(name);
    throw ConfigError(fmt::format("model_name: '{}' is not one of {{{}}}", run.model_name,
                                  fmt::join(names, ", ")));
  }
  sys.model = it->second;

  const ConfigFile hw = ConfigFile::load(dir / "system.ini");
  sys.npu = npu_from_config(hw);
  sys.pim = pim_from_config(hw, sys.npu);
  hw.expect_only("simulation",
                 {"interval_s", "page_size", "activation_tokens", "reuse", "partition"});
  sys.interval = Seconds(hw.get_double("simulation.interval_s", 1.0));
  if (!(sys.interval.count() > 0.0)) throw ConfigError("interval_s must be positive");
  sys.page_size = hw.get_int("simulation.page_size", 16);
  sys.activation_tokens = hw.get_int("simulation.activation_tokens", 2048);
  sys.reuse = hw.get_bool("simulation.reuse", true);
  const std::string partition = hw.get_string("simulation.partition", "token_count");
  if (partition == "token_count") {
    sys.criteria = PartitionCriteria::kTokenCount;
  } else if (partition == "request_count") {
    sys.criteria = PartitionCriteria::kRequestCount;
  } else {
    throw ConfigError(fmt::format(
        "partition: '{}' is not one of {{token_count, request_count}}", partition));
  }

  if (run.network.empty()) run.network = dir / "network.ini";
  sys.network = network_from_config(ConfigFile::load(run.network));
  if (!npu_num_set && sys.network.npu_num) run.npu_num = *sys.network.npu_num;
  if (!npu_group_set && sys.network.npu_group) run.npu_group = *sys.network.npu_group;
  return sys;
}

ThroughputTracker::ThroughputTracker(Seconds interval) : interval_(interval) {
  if (!(interval.count() > 0.0)) throw ConfigError("throughput interval must be positive");
}

void ThroughputTracker::record(Picoseconds end, std::int64_t prompt_tokens,
                               std::int64_t generation_tokens) {
  const double t = to_seconds(end).count();
  const auto bucket = static_cast<std::size_t>(
      std::max(0.0, std::ceil(t / interval_.count()) - 1.0));
  if (prompt_.size() <= bucket) {
    prompt_.resize(bucket + 1, 0);
    gen_.resize(bucket + 1, 0);
  }
  prompt_[bucket] += prompt_tokens;
  gen_[bucket] += generation_tokens;
  prompt_total_ += prompt_tokens;
  gen_total_ += generation_tokens;
}

std::vector<ThroughputSample> ThroughputTracker::samples() const {
  std::vector<ThroughputSample> out;
  const double w = interval_.count();
  for (std::size_t i = 0; i < prompt_.size(); ++i) {
    out.push_back({static_cast<double>(i + 1) * w, static_cast<double>(prompt_[i]) / w,
                   static_cast<double>(gen_[i]) / w});
  }
  return out;
}

void write_throughput(std::ostream& out, const std::vector<ThroughputSample>& samples) {
  out << "time_s\tprompt_tps\tgen_tps\n";
  for (const auto& s : samples) {
    out << fmt::format("{:.6f}\t{:.3f}\t{:.3f}\n", s.time_s, s.prompt_tps, s.gen_tps);
  }
}

void write_simulation_time(std::ostream& out, const ComponentTimes& times) {
  out << "component\ttime_ms\n";
  out << fmt::format("scheduler\t{:.3f}\n", times.scheduler.count());
  out << fmt::format("engine\t{:.3f}\n", times.engine.count());
  out << fmt::format("graphgen\t{:.3f}\n", times.graphgen.count());
  out << fmt::format("syssim\t{:.3f}\n", times.syssim.count());
  out << fmt::format("total\t{:.3f}\n", times.total().count());
}

void write_reports(const std::vector<ThroughputSample>& samples, const ComponentTimes& times,
                   const std::filesystem::path& prefix) {
  if (prefix.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(prefix.parent_path(), ec);
  }
  auto open = [&](std::string_view suffix) {
    const std::filesystem::path path = prefix.string() + std::string(suffix);
    std::ofstream out(path);
    if (!out) throw Error(fmt::format("cannot write {}", path.string()));
    return out;
  };
  {
    auto out = open("-throughput.tsv");
    write_throughput(out, samples);
    if (!out) throw Error("failed writing the throughput report");
  }
  {
    auto out = open("-simulation-time.tsv");
    write_simulation_time(out, times);
    if (!out) throw Error("failed writing the simulation-time report");
  }
}

Simulator::Simulator(RunConfig run, SystemConfig system, std::vector<Request> requests)
    : run_(std::move(run)),
      system_(std::move(system)),
      parallel_(parallelism_for(run_, system_.network)),
      layout_(layout_for(run_, system_.network)),
      devices_(devices_for(run_, system_)),
      memory_(budget_for(run_, system_, parallel_)),
      topology_(layout_, system_.network),
      engines_(std::make_unique<EngineStack>(system_.reuse, run_.fast_run)),
      scheduler_(scheduler_config(run_),
                 KvPageTable(system_.page_size, memory_.page_bytes, memory_.capacity_pages),
                 std::move(requests)),
      throughput_(system_.interval) {
  parallel_.validate(system_.model);
  devices_.npu.validate();
  if (devices_.pim) devices_.pim->validate();
}

std::optional<IterationReport> Simulator::step() {
  BatchPlan plan;
  {
    ScopedTimer t(times_.scheduler);
    while (true) {
      if (scheduler_.done()) return std::nullopt;
      plan = scheduler_.form_batch();
      if (!plan.empty()) break;
      if (!plan.next_wakeup) throw Error("scheduler stalled with unfinished requests");
      scheduler_.advance_clock_to(*plan.next_wakeup);
    }
  }

  IterationReport report;
  report.index = iterations_++;
  for (const auto& e : plan.members) report.batch.push_back(e.id);
  report.loads = plan.loads;
  report.stores = std::move(pending_stores_);
  pending_stores_.clear();

  std::vector<std::vector<BatchEntry>> subs;
  {
    ScopedTimer t(times_.scheduler);
    const bool split = run_.sub_batch && layout_.pim != PimMode::kNone;
    subs = partition_batch(plan.members, system_.criteria, split);
  }
  report.sub_batches = subs.size();

  std::vector<std::vector<TimedOp>> timed;
  {
    ScopedTimer t(times_.engine);
    for (const auto& sb : subs) {
      const IterationProfile full = profile_operators(system_.model, sb);
      const IterationProfile local = shard_for_tensor_parallel(
          full, system_.model, parallel_.tp_degree(), parallel_.attention);
      const MappingPlan mapping = map_operators(local, devices_, layout_.pim);
      const BlockLatencies lat =
          simulate_block_replicated(local, mapping.attention, devices_, *engines_);
      timed.push_back(expand_layers(local, mapping, lat));
    }
  }

  {
    ScopedTimer t(times_.graphgen);
    const ScheduledTrace trace = schedule_operators(std::move(timed));
    std::vector<PageEvent> events = report.stores;
    events.insert(events.end(), report.loads.begin(), report.loads.end());
    GraphInputs in;
    in.trace = &trace;
    in.parallel = &parallel_;
    in.model = &system_.model;
    in.layout = layout_;
    in.page_events = events;
    last_graph_ = build_graph(in);
  }
  report.graph_nodes = last_graph_.nodes.size();
  report.allreduce_nodes = last_graph_.count_comm(CommOp::kAllReduce);

  {
    ScopedTimer t(times_.syssim);
    report.latency = simulate_graph(last_graph_, topology_).iteration_latency;
  }

  {
    ScopedTimer t(times_.scheduler);
    report.stats = scheduler_.advance(report.latency);
    throughput_.record(report.stats.end, report.stats.prompt_tokens,
                       report.stats.generation_tokens);
    report.running_before_growth = scheduler_.running();
    report.evictions = scheduler_.grow_or_evict();
    pending_stores_ = report.evictions;
  }
  return report;
}

RunSummary Simulator::run(std::ostream* progress) {
  const auto start = Clock::now();
  RunSummary s;
  while (auto report = step()) {
    if (progress != nullptr) print_iteration(*progress, *report);
  }
  s.iterations = iterations_;
  s.simulated = scheduler_.clock();
  s.prompt_tokens = throughput_.prompt_tokens();
  s.generation_tokens = throughput_.generation_tokens();
  s.times = times_;
  s.wall = Clock::now() - start;
  return s;
}

void print_iteration(std::ostream& out, const IterationReport& r) {
  out << fmt::format("iter={} clock_ms={:.6f} batch=[{}] prompt_tps={:.3f} gen_tps={:.3f}\n",
                     r.index, to_seconds(r.stats.end).count() * 1e3, fmt::join(r.batch, ","),
                     r.stats.prompt_tps(), r.stats.generation_tps());
}

void print_summary(std::ostream& out, const RunSummary& s) {
  const double seconds = to_seconds(s.simulated).count();
  const double prompt = seconds > 0.0 ? static_cast<double>(s.prompt_tokens) / seconds : 0.0;
  const double gen = seconds > 0.0 ? static_cast<double>(s.generation_tokens) / seconds : 0.0;
  out << fmt::format("iterations={}\n", s.iterations);
  out << fmt::format("simulated_s={:.6f}\n", seconds);
  out << fmt::format("prompt_tokens={} prompt_tps={:.3f}\n", s.prompt_tokens, prompt);
  out << fmt::format("generation_tokens={} gen_tps={:.3f}\n", s.generation_tokens, gen);
  out << fmt::format(
      "sim_time_ms scheduler={:.3f} engine={:.3f} graphgen={:.3f} syssim={:.3f} total={:.3f}\n",
      s.times.scheduler.count(), s.times.engine.count(), s.times.graphgen.count(),
      s.times.syssim.count(), s.times.total().count());
  out << fmt::format("wall_s={:.3f}\n", s.wall.count());
}

}  // namespace servesim
