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

#include "servesim/graph.h"

#include <algorithm>
#include <map>
#include <ostream>
#include <queue>
#include <set>
#include <tuple>

#include <fmt/format.h>

namespace servesim {
namespace {

std::uint64_t u64(std::int64_t v) { return static_cast<std::uint64_t>(v); }

OperatorDescriptor reshape(const OperatorDescriptor& op, std::uint64_t m, std::uint64_t n,
                           std::uint64_t heads, const ModelConfig& model) {
  OperatorDescriptor out = describe_operator(op.kind, op.phase, m, op.k, n, heads, model);
  out.layer = op.layer;
  out.attention_id = op.attention_id;
  return out;
}

OperatorDescriptor shard(const OperatorDescriptor& op, const ModelConfig& model, std::uint64_t g,
                         AttentionSplit split) {
  switch (op.kind) {
    case OpKind::kEmbedding:
    case OpKind::kLayerNorm:
      return reshape(op, ceil_div(op.m, g), op.n, op.heads, model);
    case OpKind::kScore:
    case OpKind::kAttend:
      if (split == AttentionSplit::kRoundRobin) return op;
      return reshape(op, op.m, op.n, op.heads / g, model);
    default:
      return reshape(op, op.m, ceil_div(op.n, g), op.heads, model);
  }
}

}  // namespace

std::string_view to_string(ParallelMode mode) {
  switch (mode) {
    case ParallelMode::kTensor: return "tensor";
    case ParallelMode::kPipeline: return "pipeline";
    case ParallelMode::kHybrid: return "hybrid";
  }
  return "?";
}

std::string_view to_string(CommOp op) {
  switch (op) {
    case CommOp::kAllReduce: return "AllReduce";
    case CommOp::kAllGather: return "AllGather";
    case CommOp::kSend: return "Send";
    case CommOp::kRecv: return "Recv";
    case CommOp::kTransfer: return "Transfer";
  }
  return "?";
}

std::int64_t ParallelismConfig::stages() const {
  switch (mode) {
    case ParallelMode::kTensor: return 1;
    case ParallelMode::kPipeline: return npu_num;
    case ParallelMode::kHybrid: return npu_group;
  }
  return 1;
}

std::int64_t ParallelismConfig::tp_degree() const { return npu_num / stages(); }

std::int64_t ParallelismConfig::layers_per_stage(const ModelConfig& model) const {
  return static_cast<std::int64_t>(ceil_div(u64(model.num_layers), u64(stages())));
}

void ParallelismConfig::validate(const ModelConfig& model) const {
  if (npu_num < 1) throw ConfigError(fmt::format("npu_num must be >= 1, got {}", npu_num));
  if (npu_group < 1) throw ConfigError(fmt::format("npu_group must be >= 1, got {}", npu_group));
  if (mode == ParallelMode::kHybrid && npu_num % npu_group != 0) {
    throw ConfigError(
        fmt::format("npu_group {} does not divide npu_num {}", npu_group, npu_num));
  }
  const std::int64_t s = stages();
  if (s > model.num_layers) {
    throw ConfigError(fmt::format("{} pipeline stages exceed the {} layers of {}", s,
                                  model.num_layers, model.name));
  }
  if ((s - 1) * layers_per_stage(model) >= model.num_layers) {
    throw ConfigError(fmt::format("{} layers cannot fill {} stages of {} layers", model.num_layers,
                                  s, layers_per_stage(model)));
  }
  const std::int64_t g = tp_degree();
  if (attention == AttentionSplit::kHeadSplit && model.num_heads % g != 0) {
    throw ConfigError(fmt::format(
        "tensor-parallel degree {} does not divide {} attention heads (use round_robin "
        "attention placement)",
        g, model.num_heads));
  }
}

IterationProfile shard_for_tensor_parallel(const IterationProfile& profile,
                                           const ModelConfig& model, std::int64_t tp_degree,
                                           AttentionSplit split) {
  if (tp_degree < 1) throw ConfigError("tensor-parallel degree must be >= 1");
  if (tp_degree == 1) return profile;
  const std::uint64_t g = u64(tp_degree);
  if (split == AttentionSplit::kHeadSplit && u64(model.num_heads) % g != 0) {
    throw ConfigError(fmt::format("tensor-parallel degree {} does not divide {} heads", g,
                                  model.num_heads));
  }
  IterationProfile out = profile;
  out.embedding = shard(profile.embedding, model, g, split);
  for (auto& op : out.pre_attention) op = shard(op, model, g, split);
  for (auto& a : out.attention) {
    a.score = shard(a.score, model, g, split);
    a.attend = shard(a.attend, model, g, split);
  }
  for (auto& op : out.post_attention) op = shard(op, model, g, split);
  out.lm_head = shard(profile.lm_head, model, g, split);
  return out;
}

std::vector<TimedOp> expand_layers(const IterationProfile& profile, const MappingPlan& mapping,
                                   const BlockLatencies& latencies) {
  if (latencies.pre_attention.size() != profile.pre_attention.size() ||
      latencies.post_attention.size() != profile.post_attention.size() ||
      latencies.attention.size() != profile.attention.size() ||
      mapping.attention.size() != profile.attention.size()) {
    throw Error("latencies and mapping do not match the profile");
  }
  std::vector<TimedOp> ops;
  const std::size_t per_layer =
      profile.pre_attention.size() + 2 * profile.attention.size() + profile.post_attention.size();
  ops.reserve(2 + per_layer * u64(profile.num_layers));

  auto push = [&](const OperatorDescriptor& desc, std::int64_t layer, DeviceKind device,
                  const EngineResult& r, std::vector<std::uint32_t> deps) {
    TimedOp op;
    op.desc = desc;
    op.desc.layer = layer;
    op.device = device;
    op.transfer = mapping.needs_transfer(device);
    op.latency = r.latency;
    op.deps = std::move(deps);
    ops.push_back(std::move(op));
    return static_cast<std::uint32_t>(ops.size() - 1);
  };

  std::uint32_t tail =
      push(profile.embedding, 0, DeviceKind::kNPU, latencies.embedding, {});
  for (std::int64_t layer = 0; layer < profile.num_layers; ++layer) {
    for (std::size_t i = 0; i < profile.pre_attention.size(); ++i) {
      tail = push(profile.pre_attention[i], layer, DeviceKind::kNPU, latencies.pre_attention[i],
                  {tail});
    }
    std::vector<std::uint32_t> attends;
    for (std::size_t i = 0; i < profile.attention.size(); ++i) {
      const auto& a = profile.attention[i];
      const auto& place = mapping.attention[i];
      const std::uint32_t score =
          push(a.score, layer, place.score, latencies.attention[i].score, {tail});
      attends.push_back(
          push(a.attend, layer, place.attend, latencies.attention[i].attend, {score}));
    }
    for (std::size_t i = 0; i < profile.post_attention.size(); ++i) {
      std::vector<std::uint32_t> deps{tail};
      if (i == 0 && !attends.empty()) deps = attends;
      tail = push(profile.post_attention[i], layer, DeviceKind::kNPU, latencies.post_attention[i],
                  std::move(deps));
    }
  }
  push(profile.lm_head, profile.num_layers - 1, DeviceKind::kNPU, latencies.lm_head, {tail});
  return ops;
}

ScheduledTrace schedule_operators(std::vector<std::vector<TimedOp>> sub_batches) {
  ScheduledTrace trace;
  trace.sub_batches = std::move(sub_batches);
  const auto& sbs = trace.sub_batches;

  std::size_t total = 0;
  std::vector<std::vector<std::uint32_t>> missing(sbs.size());
  std::vector<std::vector<Seconds>> ready(sbs.size());
  std::vector<std::vector<std::vector<std::uint32_t>>> users(sbs.size());
  for (std::size_t b = 0; b < sbs.size(); ++b) {
    const auto& ops = sbs[b];
    total += ops.size();
    missing[b].assign(ops.size(), 0);
    ready[b].assign(ops.size(), Seconds(0.0));
    users[b].resize(ops.size());
    for (std::uint32_t i = 0; i < ops.size(); ++i) {
      for (std::uint32_t d : ops[i].deps) {
        if (d >= ops.size()) throw Error(fmt::format("op {} depends on missing op {}", i, d));
        users[b][d].push_back(i);
        ++missing[b][i];
      }
    }
  }

  // Per device: ops waiting on time, keyed (ready, sub-batch, index), and ops
  // already ready when the device frees up, keyed (sub-batch, index).
  using Waiting = std::tuple<double, std::uint32_t, std::uint32_t>;
  using Ready = std::pair<std::uint32_t, std::uint32_t>;
  std::set<Waiting> waiting[2];
  std::set<Ready> ready_now[2];
  auto slot = [](DeviceKind k) { return k == DeviceKind::kNPU ? 0 : 1; };
  for (std::uint32_t b = 0; b < sbs.size(); ++b) {
    for (std::uint32_t i = 0; i < sbs[b].size(); ++i) {
      if (missing[b][i] == 0) waiting[slot(sbs[b][i].device)].insert({0.0, b, i});
    }
  }

  Seconds free_at[2] = {Seconds(0.0), Seconds(0.0)};
  trace.order.reserve(total);
  while (trace.order.size() < total) {
    int best = -1;
    std::tuple<double, std::uint32_t, std::uint32_t> best_key;
    for (int s = 0; s < 2; ++s) {
      auto& w = waiting[s];
      while (!w.empty() && std::get<0>(*w.begin()) <= free_at[s].count()) {
        ready_now[s].insert({std::get<1>(*w.begin()), std::get<2>(*w.begin())});
        w.erase(w.begin());
      }
      std::tuple<double, std::uint32_t, std::uint32_t> key;
      if (!ready_now[s].empty()) {
        key = {free_at[s].count(), ready_now[s].begin()->first, ready_now[s].begin()->second};
      } else if (!w.empty()) {
        key = *w.begin();
      } else {
        continue;
      }
      if (best < 0 || key < best_key) {
        best = s;
        best_key = key;
      }
    }
    if (best < 0) throw Error("operator dependencies contain a cycle");
    const auto [start, b, i] = best_key;
    if (!ready_now[best].empty()) {
      ready_now[best].erase(ready_now[best].begin());
    } else {
      waiting[best].erase(waiting[best].begin());
    }
    const TimedOp& op = sbs[b][i];
    const Seconds finish = Seconds(start) + op.latency;
    free_at[best] = finish;
    trace.order.push_back({b, i, op.device, Seconds(start), finish});
    trace.makespan = std::max(trace.makespan, finish);
    for (std::uint32_t u : users[b][i]) {
      ready[b][u] = std::max(ready[b][u], finish);
      if (--missing[b][u] == 0) {
        waiting[slot(sbs[b][u].device)].insert({ready[b][u].count(), b, u});
      }
    }
  }
  return trace;
}

std::int64_t DeviceLayout::device_count() const {
  switch (pim) {
    case PimMode::kNone: return npu_num;
    case PimMode::kLocal: return 2 * npu_num;
    case PimMode::kPool: return npu_num + pim_pool_size;
  }
  return npu_num;
}

DeviceId DeviceLayout::pim_for(DeviceId npu) const {
  switch (pim) {
    case PimMode::kNone: break;
    case PimMode::kLocal: return static_cast<DeviceId>(npu_num + npu);
    case PimMode::kPool:
      if (pim_pool_size < 1) break;
      return static_cast<DeviceId>(npu_num + npu % pim_pool_size);
  }
  throw ConfigError("no PIM device is configured");
}

std::vector<std::pair<NodeId, NodeId>> ExecGraph::edges() const {
  std::vector<std::pair<NodeId, NodeId>> out;
  for (const auto& n : nodes) {
    for (NodeId d : n.deps) out.emplace_back(d, n.id);
  }
  return out;
}

std::size_t ExecGraph::count_comm(CommOp op) const {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [&](const auto& n) {
    const auto* c = std::get_if<CommWork>(&n.work);
    return c != nullptr && c->op == op;
  }));
}

std::vector<NodeId> ExecGraph::topological_order() const {
  const std::size_t n = nodes.size();
  std::vector<std::uint32_t> indeg(n, 0);
  std::vector<std::vector<NodeId>> users(n);
  for (const auto& node : nodes) {
    for (NodeId d : node.deps) {
      if (d >= n) throw Error(fmt::format("node {} depends on unknown node {}", node.id, d));
      users[d].push_back(node.id);
      ++indeg[node.id];
    }
  }
  std::priority_queue<NodeId, std::vector<NodeId>, std::greater<>> q;
  for (NodeId i = 0; i < n; ++i) {
    if (indeg[i] == 0) q.push(i);
  }
  std::vector<NodeId> order;
  order.reserve(n);
  while (!q.empty()) {
    const NodeId v = q.top();
    q.pop();
    order.push_back(v);
    for (NodeId u : users[v]) {
      if (--indeg[u] == 0) q.push(u);
    }
  }
  if (order.size() != n) throw Error("execution graph contains a cycle");
  return order;
}

namespace {

class GraphBuilder {
 public:
  explicit GraphBuilder(const GraphInputs& in)
      : trace_(*in.trace), par_(*in.parallel), model_(*in.model), layout_(in.layout),
        g_(par_.tp_degree()), stages_(par_.stages()),
        layers_per_stage_(par_.layers_per_stage(model_)) {
    if (layout_.npu_num != par_.npu_num) {
      throw ConfigError(fmt::format("device layout has {} NPUs but parallelism expects {}",
                                    layout_.npu_num, par_.npu_num));
    }
    for (std::int64_t i = 0; i < par_.npu_num; ++i) {
      all_npus_.push_back(static_cast<DeviceId>(i));
    }
    out_.resize(trace_.sub_batches.size());
    for (std::size_t b = 0; b < trace_.sub_batches.size(); ++b) {
      out_[b].resize(trace_.sub_batches[b].size());
    }
    assign_attention_ranks();
  }

  ExecGraph build(std::span<const PageEvent> events) {
    for (const auto& e : events) add_mem(e);
    for (const auto& s : trace_.order) add_op(s);
    return std::move(graph_);
  }

 private:
  // Per rank output node of one logical op. Ops placed on a single rank leave
  // the other entries empty.
  using Outputs = std::vector<std::optional<NodeId>>;

  void assign_attention_ranks() {
    std::int64_t next = 0;
    for (std::uint32_t b = 0; b < trace_.sub_batches.size(); ++b) {
      for (const auto& op : trace_.sub_batches[b]) {
        if (op.desc.kind != OpKind::kScore || !op.desc.attention_id) continue;
        const auto key = std::make_pair(b, *op.desc.attention_id);
        if (!attention_rank_.contains(key)) attention_rank_[key] = next++ % g_;
      }
    }
  }

  std::int64_t stage_of(const TimedOp& op) const {
    if (op.desc.kind == OpKind::kEmbedding) return 0;
    if (op.desc.kind == OpKind::kLMHead) return stages_ - 1;
    return std::min<std::int64_t>(op.desc.layer / layers_per_stage_, stages_ - 1);
  }

  std::optional<std::int64_t> single_rank(std::uint32_t b, const TimedOp& op) const {
    if (par_.attention != AttentionSplit::kRoundRobin || !is_attention(op.desc.kind) ||
        !op.desc.attention_id) {
      return std::nullopt;
    }
    return attention_rank_.at({b, *op.desc.attention_id});
  }

  NodeId push(GraphNode node) {
    node.id = static_cast<NodeId>(graph_.nodes.size());
    std::sort(node.deps.begin(), node.deps.end());
    node.deps.erase(std::unique(node.deps.begin(), node.deps.end()), node.deps.end());
    graph_.nodes.push_back(std::move(node));
    return graph_.nodes.back().id;
  }

  void label(GraphNode& node, std::uint32_t b, const TimedOp& op) const {
    node.op = op.desc.kind;
    node.layer = op.desc.layer;
    node.attention_id = op.desc.attention_id;
    node.sub_batch = b;
  }

  void add_mem(const PageEvent& e) {
    GraphNode node;
    MemWork w;
    w.op = e.op == PageOp::kStore ? MemOp::kStore : MemOp::kLoad;
    w.bytes = e.bytes;
    w.pages = e.pages;
    w.request = e.request;
    node.work = w;
    node.home = 0;
    node.group = all_npus_;
    node.attention_id = e.request;
    mem_nodes_.push_back(push(std::move(node)));
  }

  std::uint64_t activation_bytes(const TimedOp& op) const {
    return op.desc.m * u64(model_.hidden_dim) * u64(model_.bytes_per_param);
  }

  NodeId recv_for(std::uint32_t b, std::int64_t stage, std::int64_t rank, NodeId producer,
                  std::uint64_t bytes) {
    const auto key = std::make_tuple(b, stage, rank, producer);
    if (auto it = recv_.find(key); it != recv_.end()) return it->second;
    const DeviceId src = par_.npu(stage - 1, rank);
    const DeviceId dst = par_.npu(stage, rank);
    for (CommOp op : {CommOp::kSend, CommOp::kRecv}) {
      GraphNode node;
      node.work = CommWork{op, bytes, src, dst};
      node.home = op == CommOp::kSend ? src : dst;
      node.group = {node.home};
      node.deps = {producer};
      node.sub_batch = b;
      const NodeId id = push(std::move(node));
      if (op == CommOp::kRecv) recv_[key] = id;
    }
    return recv_[key];
  }

  // Node a consumer at (stage, rank) waits on for logical producer `dep`.
  NodeId input_from(std::uint32_t b, std::uint32_t dep, std::int64_t stage, std::int64_t rank) {
    const TimedOp& producer = trace_.sub_batches[b][dep];
    const Outputs& outs = out_[b][dep];
    const std::int64_t from = stage_of(producer);
    std::optional<NodeId> node = outs.at(static_cast<std::size_t>(rank));
    if (!node) {
      for (const auto& o : outs) {
        if (o) node = o;
      }
    }
    if (!node) throw Error("producer was not scheduled before its consumer");
    if (from == stage) return *node;
    if (from != stage - 1) throw Error("dependency skips a pipeline stage");
    return recv_for(b, stage, rank, *node, activation_bytes(producer));
  }

  void add_op(const ScheduledOp& s) {
    const std::uint32_t b = s.sub_batch;
    const TimedOp& op = trace_.op(s);
    const std::int64_t stage = stage_of(op);
    const auto only = single_rank(b, op);
    Outputs outs(static_cast<std::size_t>(g_));

    // Gather attention outputs spread over single ranks.
    std::optional<NodeId> gathered;
    if (par_.attention == AttentionSplit::kRoundRobin && g_ > 1 && !is_attention(op.desc.kind)) {
      std::vector<NodeId> deps;
      for (std::uint32_t d : op.deps) {
        if (single_rank(b, trace_.sub_batches[b][d])) deps.push_back(input_from(b, d, stage, 0));
      }
      if (!deps.empty()) {
        GraphNode node;
        node.work = CommWork{CommOp::kAllGather, activation_bytes(op), par_.npu(stage, 0),
                             par_.npu(stage, 0)};
        node.home = par_.npu(stage, 0);
        for (std::int64_t r = 0; r < g_; ++r) node.group.push_back(par_.npu(stage, r));
        node.deps = std::move(deps);
        label(node, b, op);
        gathered = push(std::move(node));
      }
    }

    std::vector<NodeId> computed;
    for (std::int64_t rank = 0; rank < g_; ++rank) {
      if (only && *only != rank) continue;
      const DeviceId npu = par_.npu(stage, rank);
      std::vector<NodeId> deps;
      for (std::uint32_t d : op.deps) {
        if (gathered && single_rank(b, trace_.sub_batches[b][d])) continue;
        deps.push_back(input_from(b, d, stage, rank));
      }
      if (gathered) deps.push_back(*gathered);
      if (op.deps.empty()) deps.insert(deps.end(), mem_nodes_.begin(), mem_nodes_.end());

      const DeviceId home = op.device == DeviceKind::kPIM ? layout_.pim_for(npu) : npu;
      if (op.transfer) {
        GraphNode in;
        in.work = CommWork{CommOp::kTransfer, op.desc.input_bytes, npu, home};
        in.home = npu;
        in.group = {npu, home};
        in.deps = std::move(deps);
        label(in, b, op);
        deps = {push(std::move(in))};
      }
      GraphNode node;
      node.work = ComputeWork{std::max(Picoseconds(1), to_picos(op.latency))};
      node.home = home;
      node.group = {home};
      node.deps = std::move(deps);
      label(node, b, op);
      NodeId last = push(std::move(node));
      if (op.transfer) {
        GraphNode back;
        back.work = CommWork{CommOp::kTransfer, op.desc.output_bytes, home, npu};
        back.home = npu;
        back.group = {npu, home};
        back.deps = {last};
        label(back, b, op);
        last = push(std::move(back));
      }
      computed.push_back(last);
      outs[static_cast<std::size_t>(rank)] = last;
    }

    const bool reduce = op.desc.kind == OpKind::kOutProj || op.desc.kind == OpKind::kFFN2;
    if (reduce && g_ > 1) {
      GraphNode node;
      node.work = CommWork{CommOp::kAllReduce, activation_bytes(op), par_.npu(stage, 0),
                           par_.npu(stage, 0)};
      node.home = par_.npu(stage, 0);
      for (std::int64_t r = 0; r < g_; ++r) node.group.push_back(par_.npu(stage, r));
      node.deps = computed;
      label(node, b, op);
      const NodeId id = push(std::move(node));
      std::fill(outs.begin(), outs.end(), id);
    }
    out_[b][s.index] = std::move(outs);
  }

  const ScheduledTrace& trace_;
  const ParallelismConfig& par_;
  const ModelConfig& model_;
  DeviceLayout layout_;
  std::int64_t g_;
  std::int64_t stages_;
  std::int64_t layers_per_stage_;

  ExecGraph graph_;
  std::vector<DeviceId> all_npus_;
  std::vector<NodeId> mem_nodes_;
  std::vector<std::vector<Outputs>> out_;
  std::map<std::pair<std::uint32_t, RequestId>, std::int64_t> attention_rank_;
  std::map<std::tuple<std::uint32_t, std::int64_t, std::int64_t, NodeId>, NodeId> recv_;
};

}  // namespace

ExecGraph build_graph(const GraphInputs& in) {
  if (in.trace == nullptr || in.parallel == nullptr || in.model == nullptr) {
    throw Error("build_graph needs a trace, a parallelism config and a model");
  }
  return GraphBuilder(in).build(in.page_events);
}

void dump_graph(std::ostream& out, const ExecGraph& graph) {
  for (const auto& n : graph.nodes) {
    std::string kind;
    std::uint64_t amount = 0;
    if (const auto* c = std::get_if<ComputeWork>(&n.work)) {
      kind = fmt::format("Compute:{}", n.op ? to_string(*n.op) : "?");
      amount = static_cast<std::uint64_t>(c->duration.count());
    } else if (const auto* c = std::get_if<CommWork>(&n.work)) {
      kind = fmt::format("Comm:{}", to_string(c->op));
      amount = c->bytes;
    } else {
      const auto& m = std::get<MemWork>(n.work);
      kind = m.op == MemOp::kStore ? "Mem:Store" : "Mem:Load";
      amount = m.bytes;
    }
    out << fmt::format("{}\t{}\t{}\t{}\t{}\n", n.id, kind, amount, n.home, fmt::join(n.deps, ","));
  }
}

}  // namespace servesim
