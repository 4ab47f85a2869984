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

#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

namespace servesim {
namespace {

namespace fs = std::filesystem;

RunConfig base_run() {
  RunConfig run;
  run.dataset = fs::path(SERVESIM_TEST_DATA) / "pairs.tsv";
  run.npu_num = 1;
  run.npu_group = 1;
  return run;
}

SystemConfig system_for(RunConfig& run) {
  return load_system(run, SERVESIM_CONFIG_DIR, true, true);
}

std::vector<Request> poisson(std::int64_t count, double rate, std::uint64_t seed = 1) {
  const std::vector<LengthPair> pairs =
      load_length_pairs(fs::path(SERVESIM_TEST_DATA) / "pairs.tsv");
  return synthesize_poisson(rate, count, pairs, seed);
}

Request request(RequestId id, double arrival_ms, std::int64_t in, std::int64_t out) {
  Request r;
  r.id = id;
  r.arrival = Microseconds(static_cast<std::int64_t>(arrival_ms * 1000));
  r.input_len = in;
  r.output_len = out;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_prefix(const std::string& name) {
  auto dir = fs::temp_directory_path() / "servesim_simulator_test";
  fs::create_directories(dir);
  return dir / name;
}

TEST(RunConfig, Defaults) {
  RunConfig run;
  EXPECT_EQ(run.model_name, "gpt2");
  EXPECT_EQ(run.npu_num, 16);
  EXPECT_EQ(run.max_batch, 0);
  EXPECT_EQ(run.batch_delay, 0.0);
  EXPECT_EQ(run.scheduling, "orca");
  EXPECT_EQ(run.parallel, "hybrid");
  EXPECT_EQ(run.npu_group, 1);
  EXPECT_EQ(run.npu_mem, 40.0);
  EXPECT_EQ(run.kv_manage, "vllm");
  EXPECT_EQ(run.pim_type, "none");
  EXPECT_FALSE(run.sub_batch);
  EXPECT_FALSE(run.gen);
  EXPECT_FALSE(run.fast_run);
}

void expect_rejected(RunConfig run, std::initializer_list<std::string> mentions) {
  try {
    run.validate();
    ADD_FAILURE() << "accepted";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    for (const auto& m : mentions) EXPECT_NE(msg.find(m), std::string::npos) << msg;
  }
}

TEST(RunConfig, RejectsUnknownChoicesAndEchoesAllowedSet) {
  auto run = base_run();
  EXPECT_NO_THROW(run.validate());
  auto bad = run;
  bad.parallel = "data";
  expect_rejected(bad, {"parallel", "data", "pipeline", "tensor", "hybrid"});
  bad = run;
  bad.pim_type = "remote";
  expect_rejected(bad, {"pim_type", "none", "local", "pool"});
  bad = run;
  bad.kv_manage = "paged";
  expect_rejected(bad, {"kv_manage", "vllm", "maxlen"});
  bad = run;
  bad.scheduling = "fifo";
  expect_rejected(bad, {"scheduling", "orca"});
}

TEST(RunConfig, RejectsOutOfRangeNumbers) {
  auto run = base_run();
  for (auto mutate : std::vector<std::function<void(RunConfig&)>>{
           [](RunConfig& r) { r.npu_num = 0; }, [](RunConfig& r) { r.npu_group = 0; },
           [](RunConfig& r) { r.max_batch = -1; }, [](RunConfig& r) { r.batch_delay = -1; },
           [](RunConfig& r) { r.npu_mem = 0; }, [](RunConfig& r) { r.dataset.clear(); }}) {
    auto bad = run;
    mutate(bad);
    EXPECT_THROW(bad.validate(), ConfigError);
  }
}

TEST(LoadSystem, ReadsPresetsAndNetworkDefaults) {
  auto run = base_run();
  run.model_name = "gpt3-7b";
  auto sys = system_for(run);
  EXPECT_EQ(sys.model.num_layers, 32);
  EXPECT_EQ(sys.model.hidden_dim, 4096);
  EXPECT_EQ(sys.network.device_link.bandwidth, 64e9);
  EXPECT_EQ(sys.interval, Seconds(1.0));
  EXPECT_EQ(sys.page_size, 16);

  run.model_name = "gpt9";
  try {
    system_for(run);
    ADD_FAILURE() << "unknown model accepted";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("gpt3-7b"), std::string::npos);
  }
}

TEST(LoadSystem, NetworkFileSuppliesUnsetParallelism) {
  const auto net = temp_prefix("net.ini");
  std::ofstream(net) << "[network]\nnpu_num = 8\nnpu_group = 2\n";
  RunConfig run = base_run();
  run.network = net;
  load_system(run, SERVESIM_CONFIG_DIR, false, false);
  EXPECT_EQ(run.npu_num, 8);
  EXPECT_EQ(run.npu_group, 2);
  RunConfig explicit_run = base_run();
  explicit_run.network = net;
  explicit_run.npu_num = 4;
  load_system(explicit_run, SERVESIM_CONFIG_DIR, true, false);
  EXPECT_EQ(explicit_run.npu_num, 4);
  EXPECT_EQ(explicit_run.npu_group, 2);
}

TEST(ThroughputTracker, TenSecondsGiveTenSamples) {
  ThroughputTracker t(Seconds(1.0));
  for (int ms = 250; ms <= 10'000; ms += 250) {
    t.record(Picoseconds(std::int64_t{ms} * 1'000'000'000), 10, 4);
  }
  auto s = t.samples();
  ASSERT_EQ(s.size(), 10u);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_DOUBLE_EQ(s[i].time_s, static_cast<double>(i + 1));
    EXPECT_DOUBLE_EQ(s[i].prompt_tps, 40.0);
    EXPECT_DOUBLE_EQ(s[i].gen_tps, 16.0);
  }
}

TEST(ThroughputTracker, GapsAreZeroFilled) {
  ThroughputTracker t(Seconds(0.5));
  t.record(Picoseconds(100'000'000'000), 5, 0);   // 0.1 s
  t.record(Picoseconds(1'800'000'000'000), 0, 3);  // 1.8 s
  auto s = t.samples();
  ASSERT_EQ(s.size(), 4u);
  EXPECT_DOUBLE_EQ(s[0].prompt_tps, 10.0);
  EXPECT_DOUBLE_EQ(s[1].prompt_tps, 0.0);
  EXPECT_DOUBLE_EQ(s[2].gen_tps, 0.0);
  EXPECT_DOUBLE_EQ(s[3].gen_tps, 6.0);
  EXPECT_EQ(t.prompt_tokens(), 5);
  EXPECT_EQ(t.generation_tokens(), 3);
}

TEST(Reports, EmptyRunHasHeaderOnly) {
  std::ostringstream out;
  write_throughput(out, {});
  EXPECT_EQ(out.str(), "time_s\tprompt_tps\tgen_tps\n");
}

TEST(Reports, ZeroRequestRunWritesHeaderOnlyFile) {
  auto run = base_run();
  auto sys = system_for(run);
  Simulator sim(run, sys, {});
  auto summary = sim.run(nullptr);
  EXPECT_EQ(summary.iterations, 0);
  const auto prefix = temp_prefix("empty");
  write_reports(sim.throughput().samples(), sim.times(), prefix);
  EXPECT_EQ(slurp(prefix.string() + "-throughput.tsv"), "time_s\tprompt_tps\tgen_tps\n");
}

TEST(Reports, SimulationTimeRowsSumToTotal) {
  ComponentTimes t;
  t.scheduler = ComponentTimes::Ms(1.25);
  t.engine = ComponentTimes::Ms(10.5);
  t.graphgen = ComponentTimes::Ms(3.0);
  t.syssim = ComponentTimes::Ms(0.125);
  std::ostringstream out;
  write_simulation_time(out, t);
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "component\ttime_ms");
  std::vector<std::string> names;
  std::map<std::string, double> values;
  std::string name;
  double v = 0;
  while (in >> name >> v) {
    names.push_back(name);
    values[name] = v;
  }
  EXPECT_EQ(names, (std::vector<std::string>{"scheduler", "engine", "graphgen", "syssim", "total"}));
  EXPECT_NEAR(values["scheduler"] + values["engine"] + values["graphgen"] + values["syssim"],
              values["total"], 1.0);
}

TEST(Reports, UnwritablePathThrows) {
  const auto blocker = temp_prefix("blocker");
  std::ofstream(blocker) << "x";
  EXPECT_THROW(write_reports({}, ComponentTimes{}, blocker / "sub" / "out"), std::exception);
}

TEST(Simulator, SingleTinyRequestTakesOneIteration) {
  auto run = base_run();
  auto sys = system_for(run);
  Simulator sim(run, sys, {request(0, 0.0, 8, 1)});
  auto summary = sim.run(nullptr);
  EXPECT_EQ(summary.iterations, 1);
  EXPECT_TRUE(sim.scheduler().done());
  EXPECT_GT(summary.simulated, Picoseconds(0));
}

TEST(Simulator, TimesSumToTotal) {
  auto run = base_run();
  auto sys = system_for(run);
  Simulator sim(run, sys, poisson(20, 50.0));
  auto summary = sim.run(nullptr);
  const auto& t = summary.times;
  EXPECT_NEAR((t.scheduler + t.engine + t.graphgen + t.syssim).count(), t.total().count(), 1e-9);
  EXPECT_GT(t.total().count(), 0.0);
}

struct RunResult {
  RunSummary summary;
  std::vector<IterationReport> iterations;
  std::vector<Request> requests;
  std::string throughput_tsv;
};

RunResult run_all(RunConfig run, std::vector<Request> requests) {
  auto sys = system_for(run);
  run.validate();
  Simulator sim(run, sys, std::move(requests));
  RunResult out;
  while (auto r = sim.step()) out.iterations.push_back(std::move(*r));
  out.summary.iterations = static_cast<std::int64_t>(out.iterations.size());
  out.summary.prompt_tokens = sim.throughput().prompt_tokens();
  out.summary.generation_tokens = sim.throughput().generation_tokens();
  out.requests = sim.scheduler().requests();
  std::ostringstream tsv;
  write_throughput(tsv, sim.throughput().samples());
  out.throughput_tsv = tsv.str();
  return out;
}

TEST(Simulator, HybridRunCompletesWithPositiveLatencies) {
  auto run = base_run();
  run.npu_num = 16;
  run.npu_group = 4;
  auto reqs = poisson(256, 40.0, 7);
  auto res = run_all(run, reqs);
  ASSERT_EQ(res.requests.size(), 256u);
  for (const auto& r : res.requests) {
    ASSERT_EQ(r.state, RequestState::kFinished);
    ASSERT_TRUE(r.finish_time.has_value());
    EXPECT_GT(*r.finish_time, std::chrono::duration_cast<Picoseconds>(r.arrival));
  }
  for (const auto& it : res.iterations) {
    EXPECT_GT(it.latency, Picoseconds(0));
    // Two all-reduces per layer on each of the four stages' groups.
    EXPECT_EQ(it.allreduce_nodes, static_cast<std::size_t>(2 * 12 * it.sub_batches));
  }
}

TEST(Simulator, TokenConservation) {
  for (bool gen : {false, true}) {
    auto run = base_run();
    run.npu_num = 4;
    run.npu_group = 2;
    run.gen = gen;
    auto reqs = poisson(64, 20.0, 3);
    std::int64_t prompt = 0;
    std::int64_t output = 0;
    for (const auto& r : reqs) {
      prompt += r.input_len;
      output += r.output_len;
    }
    auto res = run_all(run, reqs);
    EXPECT_EQ(res.summary.prompt_tokens, gen ? 0 : prompt) << gen;
    EXPECT_EQ(res.summary.generation_tokens, output) << gen;
  }
}

TEST(Simulator, GenModeSkipsInitiation) {
  auto run = base_run();
  run.gen = true;
  auto res = run_all(run, {request(0, 0.0, 100, 3)});
  EXPECT_EQ(res.summary.iterations, 3);
  auto normal = base_run();
  auto res2 = run_all(normal, {request(0, 0.0, 100, 3)});
  EXPECT_EQ(res2.summary.iterations, 3);
  EXPECT_GT(res2.iterations[0].latency, res.iterations[0].latency);
}

TEST(Simulator, DeterministicOutputs) {
  auto run = base_run();
  run.npu_num = 4;
  run.npu_group = 2;
  run.pim_type = "local";
  run.sub_batch = true;
  auto a = run_all(run, poisson(64, 30.0, 9));
  auto b = run_all(run, poisson(64, 30.0, 9));
  EXPECT_EQ(a.throughput_tsv, b.throughput_tsv);
  ASSERT_EQ(a.iterations.size(), b.iterations.size());
  for (std::size_t i = 0; i < a.iterations.size(); ++i) {
    EXPECT_EQ(a.iterations[i].latency, b.iterations[i].latency);
    EXPECT_EQ(a.iterations[i].batch, b.iterations[i].batch);
  }
}

// Small device memory forces evictions.
RunConfig tight_run() {
  auto run = base_run();
  run.npu_mem = 0.3;
  return run;
}

TEST(Simulator, EvictedPagesAreStoredThenLoadedWithMatchingBytes) {
  auto res = run_all(tight_run(), poisson(200, 200.0, 4));
  std::map<RequestId, std::uint64_t> stored;
  std::map<RequestId, std::uint64_t> loaded;
  std::size_t evictions = 0;
  for (std::size_t i = 0; i < res.iterations.size(); ++i) {
    const auto& it = res.iterations[i];
    // Stores decided after iteration i are the ones carried by iteration i + 1.
    if (i + 1 < res.iterations.size()) {
      const auto& next = res.iterations[i + 1].stores;
      ASSERT_EQ(next.size(), it.evictions.size());
      for (std::size_t k = 0; k < next.size(); ++k) {
        EXPECT_EQ(next[k].request, it.evictions[k].request);
        EXPECT_EQ(next[k].bytes, it.evictions[k].bytes);
      }
    }
    evictions += it.evictions.size();
    for (const auto& e : it.stores) stored[e.request] += e.bytes;
    for (const auto& e : it.loads) loaded[e.request] += e.bytes;
  }
  EXPECT_GT(evictions, 0u) << "memory budget did not force eviction";
  EXPECT_EQ(stored, loaded);
  for (const auto& r : res.requests) EXPECT_EQ(r.state, RequestState::kFinished);
}

TEST(Simulator, EveryStoreAppearsOnceInNextGraph) {
  auto run = tight_run();
  auto sys = system_for(run);
  Simulator sim(run, sys, poisson(120, 200.0, 2));
  std::size_t checked = 0;
  while (auto it = sim.step()) {
    std::map<RequestId, int> store_nodes;
    std::map<RequestId, int> load_nodes;
    for (const auto& n : sim.last_graph().nodes) {
      if (const auto* m = std::get_if<MemWork>(&n.work)) {
        (m->op == MemOp::kStore ? store_nodes : load_nodes)[m->request] += 1;
      }
    }
    std::map<RequestId, int> expected_stores;
    for (const auto& e : it->stores) expected_stores[e.request] += 1;
    std::map<RequestId, int> expected_loads;
    for (const auto& e : it->loads) expected_loads[e.request] += 1;
    EXPECT_EQ(store_nodes, expected_stores);
    EXPECT_EQ(load_nodes, expected_loads);
    checked += it->stores.size();
  }
  EXPECT_GT(checked, 0u);
}

TEST(Simulator, PrintsIterationLines) {
  auto run = base_run();
  auto sys = system_for(run);
  Simulator sim(run, sys, {request(0, 0.0, 8, 2), request(1, 0.0, 8, 1)});
  std::ostringstream out;
  auto summary = sim.run(&out);
  const std::string text = out.str();
  EXPECT_NE(text.find("iter=0 "), std::string::npos);
  EXPECT_NE(text.find("batch=[0,1]"), std::string::npos);
  EXPECT_NE(text.find("iter=1 "), std::string::npos);
  std::ostringstream s;
  print_summary(s, summary);
  EXPECT_NE(s.str().find("iterations"), std::string::npos);
}

TEST(Simulator, InfeasibleRequestThrows) {
  auto run = tight_run();
  auto sys = system_for(run);
  Simulator sim(run, sys, {request(0, 0.0, 4'000'000, 1)});
  EXPECT_THROW(sim.run(nullptr), InfeasibleError);
}

TEST(Simulator, PoolPimAndSubBatchingRun) {
  auto run = base_run();
  run.npu_num = 4;
  run.npu_group = 1;
  run.parallel = "tensor";
  run.pim_type = "pool";
  run.sub_batch = true;
  run.gen = true;
  auto res = run_all(run, poisson(32, 1000.0, 5));
  bool split = false;
  for (const auto& it : res.iterations) split = split || it.sub_batches == 2;
  EXPECT_TRUE(split);
  for (const auto& r : res.requests) EXPECT_EQ(r.state, RequestState::kFinished);
}

}  // namespace
}  // namespace servesim
