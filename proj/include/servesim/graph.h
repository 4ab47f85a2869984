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
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "servesim/common.h"
#include "servesim/engine.h"
#include "servesim/model.h"
#include "servesim/scheduler.h"

namespace servesim {

enum class ParallelMode { kTensor, kPipeline, kHybrid };

// How a request's attention is spread over a tensor-parallel group:
// split by heads on every rank, or whole on one rank chosen round-robin by
// attention id (followed by an all-gather before the output projection).
enum class AttentionSplit { kHeadSplit, kRoundRobin };

std::string_view to_string(ParallelMode mode);

struct ParallelismConfig {
  ParallelMode mode = ParallelMode::kHybrid;
  std::int64_t npu_num = 16;
  // Only read in hybrid mode; tensor uses one group, pipeline one per NPU.
  std::int64_t npu_group = 1;
  AttentionSplit attention = AttentionSplit::kHeadSplit;

  std::int64_t stages() const;
  std::int64_t tp_degree() const;
  std::int64_t layers_per_stage(const ModelConfig& model) const;
  // NPU id of `rank` within pipeline `stage`.
  DeviceId npu(std::int64_t stage, std::int64_t rank) const {
    return static_cast<DeviceId>(stage * tp_degree() + rank);
  }

  // Throws ConfigError if groups do not divide the NPUs, a stage would own no
  // layers, or head splitting is requested with tp_degree not dividing heads.
  void validate(const ModelConfig& model) const;
};

// Rewrites a profile for one tensor-parallel rank. Matmuls keep m and split
// n; LayerNorm and Embedding split tokens; attention splits heads (or stays
// whole under round-robin placement).
IterationProfile shard_for_tensor_parallel(const IterationProfile& profile,
                                           const ModelConfig& model, std::int64_t tp_degree,
                                           AttentionSplit split);

// An operator with its engine latency and placement, ready to be ordered.
struct TimedOp {
  OperatorDescriptor desc;
  DeviceKind device = DeviceKind::kNPU;
  bool transfer = false;
  Seconds latency{0.0};
  // Indices of producers in the same sub-batch list.
  std::vector<std::uint32_t> deps;
};

// Unrolls a replicated profile into Embedding, L blocks and LMHead with
// program-order dependencies.
std::vector<TimedOp> expand_layers(const IterationProfile& profile, const MappingPlan& mapping,
                                   const BlockLatencies& latencies);

struct ScheduledOp {
  std::uint32_t sub_batch = 0;
  std::uint32_t index = 0;
  DeviceKind device = DeviceKind::kNPU;
  Seconds start{0.0};
  Seconds finish{0.0};
};

struct ScheduledTrace {
  std::vector<std::vector<TimedOp>> sub_batches;
  // Dispatch order; starts are non-decreasing.
  std::vector<ScheduledOp> order;
  Seconds makespan{0.0};

  const TimedOp& op(const ScheduledOp& s) const { return sub_batches[s.sub_batch][s.index]; }
};

// Greedy list scheduling over one NPU and one PIM. Each step dispatches the
// op with the earliest feasible start (producers done, device free), ties
// broken by (sub-batch, index); a lone sub-batch on one device therefore runs
// in program order. Throws Error on a dependency cycle.
ScheduledTrace schedule_operators(std::vector<std::vector<TimedOp>> sub_batches);

using NodeId = std::uint32_t;

enum class CommOp { kAllReduce, kAllGather, kSend, kRecv, kTransfer };
enum class MemOp { kLoad, kStore };

std::string_view to_string(CommOp op);

struct ComputeWork {
  Picoseconds duration{0};
};

struct CommWork {
  CommOp op = CommOp::kAllReduce;
  std::uint64_t bytes = 0;
  // Endpoints used for link lookup of point-to-point ops.
  DeviceId src = 0;
  DeviceId dst = 0;
};

struct MemWork {
  MemOp op = MemOp::kStore;
  std::uint64_t bytes = 0;
  std::int64_t pages = 0;
  RequestId request = 0;
};

struct GraphNode {
  NodeId id = 0;
  std::variant<ComputeWork, CommWork, MemWork> work;
  DeviceId home = 0;
  // Devices occupied while the node runs; always contains `home`.
  std::vector<DeviceId> group;
  std::vector<NodeId> deps;

  // Label.
  std::optional<OpKind> op;
  std::int64_t layer = kAllLayers;
  std::optional<RequestId> attention_id;
  std::uint32_t sub_batch = 0;

  bool is_compute() const { return std::holds_alternative<ComputeWork>(work); }
  bool is_comm() const { return std::holds_alternative<CommWork>(work); }
  bool is_mem() const { return std::holds_alternative<MemWork>(work); }
};

struct ExecGraph {
  std::vector<GraphNode> nodes;

  std::vector<std::pair<NodeId, NodeId>> edges() const;
  std::size_t count_comm(CommOp op) const;
  // Returns ids in a topological order or throws Error on a cycle.
  std::vector<NodeId> topological_order() const;
};

// Device numbering shared by graphgen and the system simulator: NPUs are
// 0..N-1; local PIMs are N+i (attached to NPU i); pooled PIMs are N..N+P-1.
struct DeviceLayout {
  std::int64_t npu_num = 1;
  PimMode pim = PimMode::kNone;
  std::int64_t pim_pool_size = 0;

  std::int64_t device_count() const;
  DeviceId pim_for(DeviceId npu) const;
};

struct GraphInputs {
  const ScheduledTrace* trace = nullptr;
  const ParallelismConfig* parallel = nullptr;
  const ModelConfig* model = nullptr;
  DeviceLayout layout;
  // Stores from the previous iteration followed by this iteration's loads.
  std::span<const PageEvent> page_events;
};

ExecGraph build_graph(const GraphInputs& in);

// node_id<TAB>kind<TAB>duration_ps_or_bytes<TAB>home<TAB>deps
void dump_graph(std::ostream& out, const ExecGraph& graph);

}  // namespace servesim
