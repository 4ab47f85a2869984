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

#include "servesim/syssim.h"

#include <algorithm>
#include <cstdlib>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "servesim/config_file.h"

namespace servesim {
namespace {

void check_link(const Link& l, std::string_view what) {
  if (!(l.bandwidth > 0.0) || l.latency.count() < 0.0 || std::isnan(l.latency.count())) {
    throw ConfigError(fmt::format("{} needs positive bandwidth and non-negative latency", what));
  }
}

double bandwidth_from_gbps(double gbps) {
  return std::isinf(gbps) ? std::numeric_limits<double>::infinity() : gbps * kGiga;
}

std::pair<DeviceId, DeviceId> ordered(DeviceId a, DeviceId b) {
  return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
}

bool parse_number(const std::string& text, double& out) {
  char* end = nullptr;
  out = std::strtod(text.c_str(), &end);
  return end != text.c_str() && *end == '\0' && !std::isnan(out);
}

}  // namespace

NetworkConfig network_from_config(const ConfigFile& file) {
  NetworkConfig net;
  file.expect_only("network", {"link_bw_GBps", "link_latency_ns", "host_bw_GBps",
                               "host_latency_ns", "pim_num", "attention_placement", "npu_num",
                               "npu_group"});
  net.device_link.bandwidth =
      bandwidth_from_gbps(file.get_double("network.link_bw_GBps", net.device_link.bandwidth / kGiga));
  net.device_link.latency =
      Seconds(file.get_double("network.link_latency_ns", net.device_link.latency.count() * 1e9) *
              1e-9);
  net.host_link.bandwidth =
      bandwidth_from_gbps(file.get_double("network.host_bw_GBps", net.host_link.bandwidth / kGiga));
  net.host_link.latency =
      Seconds(file.get_double("network.host_latency_ns", net.host_link.latency.count() * 1e9) *
              1e-9);
  net.pim_pool_size = file.get_int("network.pim_num", 0);
  if (net.pim_pool_size < 0) throw ConfigError("pim_num must be >= 0");
  const std::string placement = file.get_string("network.attention_placement", "head_split");
  if (placement == "head_split") {
    net.attention = AttentionSplit::kHeadSplit;
  } else if (placement == "round_robin") {
    net.attention = AttentionSplit::kRoundRobin;
  } else {
    throw ConfigError(fmt::format(
        "attention_placement must be head_split or round_robin, got '{}'", placement));
  }
  if (file.has("network.npu_num")) net.npu_num = file.get_int("network.npu_num");
  if (file.has("network.npu_group")) net.npu_group = file.get_int("network.npu_group");

  for (const auto& key : file.keys("links")) {
    const auto dash = key.find('-');
    DeviceId a = 0;
    DeviceId b = 0;
    char sep = 0;
    std::istringstream ids(key);
    if (dash == std::string::npos || !(ids >> a >> sep >> b) || sep != '-' || a < 0 || b < 0 ||
        !ids.eof()) {
      throw ConfigError(fmt::format("link key '{}' must look like <a>-<b>", key));
    }
    if (a == b) throw ConfigError(fmt::format("link {} connects a device to itself", key));
    std::istringstream value(file.get_string("links." + key));
    std::string gbps_text;
    std::string ns_text;
    std::string extra;
    double gbps = 0.0;
    double ns = 0.0;
    if (!(value >> gbps_text >> ns_text) || (value >> extra) || !parse_number(gbps_text, gbps) ||
        !parse_number(ns_text, ns)) {
      throw ConfigError(fmt::format("link {} must be '<GBps> <latency_ns>'", key));
    }
    Link l{bandwidth_from_gbps(gbps), Seconds(ns * 1e-9)};
    check_link(l, fmt::format("link {}", key));
    net.overrides[ordered(a, b)] = l;
  }
  check_link(net.device_link, "device link");
  check_link(net.host_link, "host link");
  return net;
}

Topology::Topology(const DeviceLayout& layout, const NetworkConfig& network)
    : network_(network) {
  check_link(network_.device_link, "device link");
  check_link(network_.host_link, "host link");
  const std::int64_t count = layout.device_count();
  for (std::int64_t i = 0; i < count; ++i) {
    devices_.push_back({static_cast<DeviceId>(i),
                        i < layout.npu_num ? DeviceKind::kNPU : DeviceKind::kPIM});
  }
  for (const auto& [pair, l] : network_.overrides) {
    if (pair.second >= count) {
      throw ConfigError(fmt::format("link {}-{} names a device outside 0..{}", pair.first,
                                    pair.second, count - 1));
    }
  }
}

const Link& Topology::link(DeviceId a, DeviceId b) const {
  if (!network_.overrides.empty()) {
    if (auto it = network_.overrides.find(ordered(a, b)); it != network_.overrides.end()) {
      return it->second;
    }
  }
  return network_.device_link;
}

Link Topology::ring_link(std::span<const DeviceId> group) const {
  if (network_.overrides.empty() || group.size() < 2) return network_.device_link;
  Link out{std::numeric_limits<double>::infinity(), Seconds(0.0)};
  for (std::size_t i = 0; i < group.size(); ++i) {
    const Link& l = link(group[i], group[(i + 1) % group.size()]);
    out.bandwidth = std::min(out.bandwidth, l.bandwidth);
    out.latency = std::max(out.latency, l.latency);
  }
  return out;
}

Seconds collective_time(std::uint64_t bytes, std::int64_t group_size, const Link& link) {
  if (group_size < 2) {
    throw Error(fmt::format("a collective needs at least two participants, got {}", group_size));
  }
  const double g = static_cast<double>(group_size);
  return Seconds(2.0 * (g - 1.0) / g * static_cast<double>(bytes) / link.bandwidth +
                 2.0 * (g - 1.0) * link.latency.count());
}

Seconds allgather_time(std::uint64_t bytes, std::int64_t group_size, const Link& link) {
  if (group_size < 2) {
    throw Error(fmt::format("a collective needs at least two participants, got {}", group_size));
  }
  const double g = static_cast<double>(group_size);
  return Seconds((g - 1.0) / g * static_cast<double>(bytes) / link.bandwidth +
                 (g - 1.0) * link.latency.count());
}

Seconds transfer_time(std::uint64_t bytes, const Link& link) {
  if (bytes == 0) throw Error("transfer of zero bytes");
  return Seconds(static_cast<double>(bytes) / link.bandwidth + link.latency.count());
}

Picoseconds node_duration(const GraphNode& node, const Topology& topology) {
  if (const auto* c = std::get_if<ComputeWork>(&node.work)) {
    if (c->duration <= Picoseconds(0)) {
      throw Error(fmt::format("compute node {} has a non-positive duration", node.id));
    }
    return c->duration;
  }
  if (const auto* m = std::get_if<MemWork>(&node.work)) {
    if (m->bytes == 0) return Picoseconds(0);
    return to_picos(transfer_time(m->bytes, topology.host_link()));
  }
  const auto& c = std::get<CommWork>(node.work);
  switch (c.op) {
    case CommOp::kAllReduce:
      return to_picos(collective_time(c.bytes, static_cast<std::int64_t>(node.group.size()),
                                      topology.ring_link(node.group)));
    case CommOp::kAllGather:
      return to_picos(allgather_time(c.bytes, static_cast<std::int64_t>(node.group.size()),
                                     topology.ring_link(node.group)));
    case CommOp::kSend:
    case CommOp::kRecv:
    case CommOp::kTransfer:
      if (c.bytes == 0) return Picoseconds(0);
      return to_picos(transfer_time(c.bytes, topology.link(c.src, c.dst)));
  }
  return Picoseconds(0);
}

SimOutcome simulate_graph(const ExecGraph& graph, const Topology& topology) {
  const std::size_t n = graph.nodes.size();
  const std::size_t devices = topology.size();
  SimOutcome out;
  out.busy.assign(devices, Picoseconds(0));
  out.start.assign(n, Picoseconds(-1));
  out.finish.assign(n, Picoseconds(-1));

  std::vector<Picoseconds> duration(n);
  std::vector<std::uint32_t> missing(n, 0);
  std::vector<std::vector<NodeId>> users(n);
  for (const auto& node : graph.nodes) {
    if (node.id >= n || &graph.nodes[node.id] != &node) {
      throw Error(fmt::format("node ids must equal their positions (saw {})", node.id));
    }
    if (node.group.empty()) throw Error(fmt::format("node {} occupies no device", node.id));
    for (DeviceId d : node.group) {
      if (d < 0 || static_cast<std::size_t>(d) >= devices) {
        throw Error(fmt::format("node {} uses unknown device {}", node.id, d));
      }
    }
    for (NodeId d : node.deps) {
      if (d >= n) throw Error(fmt::format("node {} depends on unknown node {}", node.id, d));
      users[d].push_back(node.id);
    }
    missing[node.id] = static_cast<std::uint32_t>(node.deps.size());
    duration[node.id] = node_duration(node, topology);
  }

  std::vector<char> busy(devices, 0);
  std::vector<std::set<NodeId>> waiting_on(devices);
  using Event = std::pair<std::int64_t, NodeId>;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> running;

  std::vector<NodeId> candidates;
  auto make_ready = [&](NodeId v) {
    candidates.push_back(v);
    for (DeviceId d : graph.nodes[v].group) waiting_on[static_cast<std::size_t>(d)].insert(v);
  };
  for (NodeId v = 0; v < n; ++v) {
    if (missing[v] == 0) make_ready(v);
  }

  std::size_t done = 0;
  Picoseconds now(0);
  std::vector<DeviceId> freed;
  while (true) {
    for (DeviceId d : freed) {
      const auto& w = waiting_on[static_cast<std::size_t>(d)];
      candidates.insert(candidates.end(), w.begin(), w.end());
    }
    freed.clear();
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
    for (NodeId v : candidates) {
      if (out.start[v].count() >= 0) continue;
      const auto& group = graph.nodes[v].group;
      const bool idle = std::all_of(group.begin(), group.end(),
                                    [&](DeviceId d) { return !busy[static_cast<std::size_t>(d)]; });
      if (!idle) continue;
      out.start[v] = now;
      for (DeviceId d : group) {
        busy[static_cast<std::size_t>(d)] = 1;
        waiting_on[static_cast<std::size_t>(d)].erase(v);
      }
      running.push({(now + duration[v]).count(), v});
    }
    candidates.clear();
    if (running.empty()) break;

    now = Picoseconds(running.top().first);
    while (!running.empty() && running.top().first == now.count()) {
      const NodeId v = running.top().second;
      running.pop();
      out.finish[v] = now;
      ++done;
      const auto& node = graph.nodes[v];
      for (DeviceId d : node.group) {
        busy[static_cast<std::size_t>(d)] = 0;
        out.busy[static_cast<std::size_t>(d)] += duration[v];
        freed.push_back(d);
      }
      if (node.is_comm()) out.comm_time += duration[v];
      for (NodeId u : users[v]) {
        if (--missing[u] == 0) make_ready(u);
      }
    }
  }
  if (done != n) throw Error("execution graph contains a cycle");
  out.iteration_latency = now;
  return out;
}

}  // namespace servesim
