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

// Runs the per-iteration front half (profile, shard, map, engine, expand,
// schedule, build) for hand-made batches.

#pragma once

#include <span>
#include <vector>

#include "servesim/engine.h"
#include "servesim/graph.h"
#include "servesim/model.h"
#include "servesim/scheduler.h"

namespace servesim::testing {

struct BuiltIteration {
  ScheduledTrace trace;
  ExecGraph graph;
};

inline BuiltIteration build_iteration(const ModelConfig& model,
                                      const std::vector<std::vector<BatchEntry>>& subs,
                                      const ParallelismConfig& parallel, const DeviceSet& devices,
                                      PimMode pim, EngineStack& engines,
                                      std::int64_t pool_size = 0,
                                      std::span<const PageEvent> events = {}) {
  parallel.validate(model);
  std::vector<std::vector<TimedOp>> timed;
  for (const auto& sb : subs) {
    auto local = shard_for_tensor_parallel(profile_operators(model, sb), model,
                                           parallel.tp_degree(), parallel.attention);
    auto mapping = map_operators(local, devices, pim);
    auto latencies = simulate_block_replicated(local, mapping.attention, devices, engines);
    timed.push_back(expand_layers(local, mapping, latencies));
  }
  BuiltIteration out;
  out.trace = schedule_operators(std::move(timed));
  GraphInputs in;
  in.trace = &out.trace;
  in.parallel = &parallel;
  in.model = &model;
  in.layout = DeviceLayout{parallel.npu_num, pim, pim == PimMode::kPool ? pool_size : 0};
  in.page_events = events;
  out.graph = build_graph(in);
  return out;
}

inline ParallelismConfig make_parallel(ParallelMode mode, std::int64_t npus, std::int64_t groups = 1,
                                       AttentionSplit split = AttentionSplit::kHeadSplit) {
  ParallelismConfig p;
  p.mode = mode;
  p.npu_num = npus;
  p.npu_group = groups;
  p.attention = split;
  return p;
}

}  // namespace servesim::testing
