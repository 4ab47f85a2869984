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
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "servesim/common.h"
#include "servesim/engine.h"
#include "servesim/graph.h"

namespace servesim {

class ConfigFile;

struct Link {
  // Bytes per second; infinity makes transfers free apart from latency.
  double bandwidth = 64e9;
  Seconds latency{100e-9};
};

struct NetworkConfig {
  Link device_link;
  Link host_link{64e9, Seconds(100e-9)};
  std::int64_t pim_pool_size = 0;
  AttentionSplit attention = AttentionSplit::kHeadSplit;
  // Per-pair overrides, keyed with the smaller id first.
  std::map<std::pair<DeviceId, DeviceId>, Link> overrides;
  // Defaults used when the command line leaves these unset.
  std::optional<std::int64_t> npu_num;
  std::optional<std::int64_t> npu_group;
};

// Reads a network file: [network] link_bw_GBps, link_latency_ns,
// host_bw_GBps, host_latency_ns, pim_num, attention_placement, npu_num,
// npu_group; [links] "a-b = <GBps> <ns>".
NetworkConfig network_from_config(const ConfigFile& file);

struct DeviceInfo {
  DeviceId id = 0;
  DeviceKind kind = DeviceKind::kNPU;
};

class Topology {
 public:
  Topology(const DeviceLayout& layout, const NetworkConfig& network);

  const std::vector<DeviceInfo>& devices() const { return devices_; }
  std::size_t size() const { return devices_.size(); }
  const Link& link(DeviceId a, DeviceId b) const;
  const Link& host_link() const { return network_.host_link; }
  // Slowest bandwidth and largest latency along the ring through `group`.
  Link ring_link(std::span<const DeviceId> group) const;

 private:
  std::vector<DeviceInfo> devices_;
  NetworkConfig network_;
};

// Ring all-reduce of `bytes` over `group_size` participants. Throws Error for
// fewer than two participants.
Seconds collective_time(std::uint64_t bytes, std::int64_t group_size, const Link& link);
Seconds allgather_time(std::uint64_t bytes, std::int64_t group_size, const Link& link);
// Point-to-point. Throws Error for an empty payload.
Seconds transfer_time(std::uint64_t bytes, const Link& link);

// Duration of any node on `topology`.
Picoseconds node_duration(const GraphNode& node, const Topology& topology);

struct SimOutcome {
  Picoseconds iteration_latency{0};
  std::vector<Picoseconds> busy;  // per device
  std::vector<Picoseconds> start;  // per node
  std::vector<Picoseconds> finish;  // per node
  Picoseconds comm_time{0};  // summed over communication nodes
};

// Discrete-event list scheduling: a node starts once its dependencies have
// finished and every device in its group is idle. Among nodes that become
// startable at the same instant, lower ids go first. Throws Error on cycles
// or unknown devices.
SimOutcome simulate_graph(const ExecGraph& graph, const Topology& topology);

}  // namespace servesim
