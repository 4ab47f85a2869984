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

// Exhaustive reference for simulate_graph on small graphs.
//
// Every topological order is turned into a schedule by starting each node as
// soon as its producers are done and its devices are past their last use.
// A schedule is kept when it satisfies the two rules the event simulator
// promises:
//   - no idling: between becoming ready and starting, some device of the
//     node is busy;
//   - id priority: if a lower-id node u was ready at v's start yet started
//     later, one of u's devices was held at that instant by a node already
//     running or started ahead of u.
// Survivors must all describe one schedule.

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "servesim/graph.h"

namespace servesim::testing {

struct SmallNode {
  std::int64_t duration = 1;
  std::vector<DeviceId> devices;
  std::vector<std::size_t> deps;
};

struct Schedule {
  std::vector<std::int64_t> start;
  std::vector<std::int64_t> finish;
  bool operator==(const Schedule&) const = default;
};

inline bool uses(const SmallNode& n, DeviceId d) {
  return std::find(n.devices.begin(), n.devices.end(), d) != n.devices.end();
}

inline bool share_device(const SmallNode& a, const SmallNode& b) {
  for (DeviceId d : a.devices) {
    if (uses(b, d)) return true;
  }
  return false;
}

inline std::optional<Schedule> place_in_order(const std::vector<SmallNode>& g,
                                              const std::vector<std::size_t>& order) {
  const std::size_t n = g.size();
  Schedule s{std::vector<std::int64_t>(n, -1), std::vector<std::int64_t>(n, -1)};
  for (std::size_t pos = 0; pos < n; ++pos) {
    const std::size_t v = order[pos];
    std::int64_t t = 0;
    for (std::size_t d : g[v].deps) {
      if (s.finish[d] < 0) return std::nullopt;  // not topological
      t = std::max(t, s.finish[d]);
    }
    for (std::size_t p = 0; p < pos; ++p) {
      const std::size_t u = order[p];
      if (share_device(g[u], g[v])) t = std::max(t, s.finish[u]);
    }
    s.start[v] = t;
    s.finish[v] = t + g[v].duration;
  }
  return s;
}

inline std::int64_t ready_time(const std::vector<SmallNode>& g, const Schedule& s,
                               std::size_t v) {
  std::int64_t r = 0;
  for (std::size_t d : g[v].deps) r = std::max(r, s.finish[d]);
  return r;
}

inline bool satisfies_rules(const std::vector<SmallNode>& g, const Schedule& s) {
  const std::size_t n = g.size();
  // No idling. Busy intervals are integral, so unit steps cover [ready, start).
  for (std::size_t v = 0; v < n; ++v) {
    for (std::int64_t t = ready_time(g, s, v); t < s.start[v]; ++t) {
      bool busy = false;
      for (std::size_t u = 0; u < n && !busy; ++u) {
        busy = u != v && share_device(g[u], g[v]) && s.start[u] <= t && t < s.finish[u];
      }
      if (!busy) return false;
    }
  }
  // Id priority.
  for (std::size_t v = 0; v < n; ++v) {
    const std::int64_t t = s.start[v];
    for (std::size_t u = 0; u < v; ++u) {
      if (!(t < s.start[u]) || ready_time(g, s, u) > t) continue;
      bool blocked = false;
      for (std::size_t w = 0; w < n && !blocked; ++w) {
        if (w == u || !share_device(g[w], g[u])) continue;
        const bool running = s.start[w] < t && t < s.finish[w];
        const bool started_first = s.start[w] == t && w < u;
        blocked = running || started_first;
      }
      if (!blocked) return false;
    }
  }
  return true;
}

// All surviving schedules (deduplicated).
inline std::vector<Schedule> enumerate_schedules(const std::vector<SmallNode>& g) {
  std::vector<std::size_t> order(g.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Schedule> out;
  do {
    auto s = place_in_order(g, order);
    if (!s || !satisfies_rules(g, *s)) continue;
    if (std::find(out.begin(), out.end(), *s) == out.end()) out.push_back(*s);
  } while (std::next_permutation(order.begin(), order.end()));
  return out;
}

// Random DAG over `devices` devices; edges follow a hidden random order so
// dependency direction is unrelated to ids.
inline std::vector<SmallNode> random_small_dag(std::mt19937_64& rng, std::size_t max_nodes,
                                               int devices) {
  std::uniform_int_distribution<std::size_t> count(1, max_nodes);
  const std::size_t n = count(rng);
  std::vector<std::size_t> rank(n);
  std::iota(rank.begin(), rank.end(), 0);
  std::shuffle(rank.begin(), rank.end(), rng);
  std::uniform_int_distribution<std::int64_t> dur(1, 4);
  std::uniform_int_distribution<int> dev(0, devices - 1);
  std::bernoulli_distribution edge(0.3);
  std::bernoulli_distribution pair(0.3);
  std::vector<SmallNode> g(n);
  for (std::size_t v = 0; v < n; ++v) {
    g[v].duration = dur(rng);
    g[v].devices.push_back(dev(rng));
    if (pair(rng)) {
      const DeviceId other = dev(rng);
      if (other != g[v].devices[0]) g[v].devices.push_back(other);
    }
    for (std::size_t u = 0; u < n; ++u) {
      if (rank[u] < rank[v] && edge(rng)) g[v].deps.push_back(u);
    }
  }
  return g;
}

inline ExecGraph to_exec_graph(const std::vector<SmallNode>& g) {
  ExecGraph out;
  for (std::size_t v = 0; v < g.size(); ++v) {
    GraphNode node;
    node.id = static_cast<NodeId>(v);
    node.work = ComputeWork{Picoseconds(g[v].duration)};
    node.home = g[v].devices[0];
    node.group = g[v].devices;
    for (std::size_t d : g[v].deps) node.deps.push_back(static_cast<NodeId>(d));
    out.nodes.push_back(std::move(node));
  }
  return out;
}

}  // namespace servesim::testing
