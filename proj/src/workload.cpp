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

#include "servesim/workload.h"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <string>

namespace servesim {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::optional<double> parse_number(std::string_view field) {
  while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
  while (!field.empty() && field.back() == ' ') field.remove_suffix(1);
  double value = 0.0;
  const auto* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || field.empty()) return std::nullopt;
  return value;
}

std::optional<std::int64_t> parse_count(std::string_view field) {
  auto value = parse_number(field);
  if (!value || *value != std::floor(*value)) return std::nullopt;
  return static_cast<std::int64_t>(*value);
}

void sort_and_number(std::vector<Request>& requests) {
  std::stable_sort(requests.begin(), requests.end(),
                   [](const Request& a, const Request& b) {
                     return a.arrival < b.arrival;
                   });
  for (std::size_t i = 0; i < requests.size(); ++i) {
    requests[i].id = static_cast<RequestId>(i);
  }
}

// Reads every non-empty line, stripping a trailing '\r'.
template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    fn(std::string_view(line), line_no);
  }
}

}  // namespace

std::string_view to_string(RequestState state) {
  switch (state) {
    case RequestState::kWaiting:
      return "waiting";
    case RequestState::kRunning:
      return "running";
    case RequestState::kEvicted:
      return "evicted";
    case RequestState::kFinished:
      return "finished";
  }
  return "unknown";
}

std::vector<Request> parse_trace(std::istream& in, std::string_view source) {
  std::vector<Request> requests;
  for_each_line(in, [&](std::string_view line, std::size_t line_no) {
    auto fields = split_tabs(line);
    if (line_no == 1 && !parse_number(fields.front())) return;  // header
    if (fields.size() != 3) {
      throw ParseError(fmt::format("{}:{}: expected 3 tab-separated fields, got {}",
                                   source, line_no, fields.size()));
    }
    auto input_len = parse_count(fields[0]);
    auto output_len = parse_count(fields[1]);
    auto arrival_ms = parse_number(fields[2]);
    if (!input_len || !output_len || !arrival_ms) {
      throw ParseError(fmt::format("{}:{}: malformed row '{}'", source, line_no, line));
    }
    if (*input_len <= 0 || *output_len <= 0) {
      throw ParseError(fmt::format(
          "{}:{}: input and output lengths must be at least 1 token", source, line_no));
    }
    if (*arrival_ms < 0.0) {
      throw ParseError(fmt::format("{}:{}: negative arrival time", source, line_no));
    }
    Request r;
    r.input_len = *input_len;
    r.output_len = *output_len;
    r.arrival = Microseconds(std::llround(*arrival_ms * 1000.0));
    requests.push_back(r);
  });
  sort_and_number(requests);
  return requests;
}

std::vector<Request> load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open trace '{}'", path.string()));
  return parse_trace(in, path.string());
}

void write_trace(std::ostream& out, std::span<const Request> requests) {
  out << "input_toks\toutput_toks\tarrival_ms\n";
  for (const auto& r : requests) {
    const std::int64_t us = r.arrival.count();
    out << fmt::format("{}\t{}\t{}.{:03d}\n", r.input_len, r.output_len,
                       us / 1000, us % 1000);
  }
}

std::vector<Request> synthesize_poisson(double rate_per_s,
                                        std::int64_t count,
                                        std::span<const LengthPair> pairs,
                                        std::uint64_t seed) {
  if (!(rate_per_s > 0.0)) throw ConfigError("poisson rate must be positive");
  if (count < 0) throw ConfigError("request count must be non-negative");
  if (pairs.empty()) throw ConfigError("at least one length pair is required");

  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(rate_per_s);
  std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);

  std::vector<Request> requests;
  requests.reserve(static_cast<std::size_t>(count));
  double now_s = 0.0;
  for (std::int64_t i = 0; i < count; ++i) {
    now_s += gap(rng);
    const LengthPair& lp = pairs[pick(rng)];
    Request r;
    r.id = i;
    r.input_len = lp.input_len;
    r.output_len = lp.output_len;
    r.arrival = Microseconds(std::llround(now_s * 1e6));
    requests.push_back(r);
  }
  return requests;
}

std::vector<LengthPair> load_length_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(fmt::format("cannot open '{}'", path.string()));
  std::vector<LengthPair> pairs;
  for_each_line(in, [&](std::string_view line, std::size_t line_no) {
    auto fields = split_tabs(line);
    if (line_no == 1 && !parse_number(fields.front())) return;
    std::optional<std::int64_t> in_len, out_len;
    if (fields.size() >= 2) {
      in_len = parse_count(fields[0]);
      out_len = parse_count(fields[1]);
    }
    if (!in_len || !out_len || *in_len <= 0 || *out_len <= 0) {
      throw ParseError(fmt::format("{}:{}: malformed length pair", path.string(), line_no));
    }
    pairs.push_back({*in_len, *out_len});
  });
  return pairs;
}

}  // namespace servesim
