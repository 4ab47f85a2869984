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
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "servesim/common.h"

namespace servesim {

enum class RequestState { kWaiting, kRunning, kEvicted, kFinished };

std::string_view to_string(RequestState state);

// One serving request. Lengths are in tokens.
struct Request {
  RequestId id = 0;
  Microseconds arrival{0};
  std::int64_t input_len = 0;
  std::int64_t output_len = 0;

  RequestState state = RequestState::kWaiting;
  std::int64_t generated = 0;
  // Tokens whose KV is held for this request.
  std::int64_t context_len = 0;
  // Set when the request reaches kFinished.
  std::optional<Picoseconds> finish_time;
};

struct LengthPair {
  std::int64_t input_len = 0;
  std::int64_t output_len = 0;
};

// Parses a TSV trace: input_toks, output_toks, arrival_ms per line. A first
// line whose leading field is not numeric is treated as a header. The
// returned requests are sorted by arrival (ties keep file order) and numbered
// 0..n-1 in that order.
std::vector<Request> parse_trace(std::istream& in,
                                 std::string_view source = "<stream>");
std::vector<Request> load_trace(const std::filesystem::path& path);

// Writes requests in the trace format, with a header line. Arrival times are
// printed in milliseconds with microsecond resolution so that parse_trace
// reproduces them exactly.
void write_trace(std::ostream& out, std::span<const Request> requests);

// Poisson arrivals at `rate_per_s` with lengths drawn uniformly (with
// replacement) from `pairs`. Deterministic in all arguments.
std::vector<Request> synthesize_poisson(double rate_per_s,
                                        std::int64_t count,
                                        std::span<const LengthPair> pairs,
                                        std::uint64_t seed);

// Two-column TSV (input_toks, output_toks) with an optional header.
std::vector<LengthPair> load_length_pairs(const std::filesystem::path& path);

}  // namespace servesim
