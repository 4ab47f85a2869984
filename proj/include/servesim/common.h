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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace servesim {

// Simulated time. Event ordering is done on integer picoseconds so that
// replays are exact; cost models work in floating-point seconds.
using Picoseconds = std::chrono::duration<std::int64_t, std::pico>;
using Microseconds = std::chrono::duration<std::int64_t, std::micro>;
using Seconds = std::chrono::duration<double>;

using RequestId = std::int64_t;
using DeviceId = std::int32_t;

inline constexpr double kGiga = 1e9;

// Rounds to the nearest picosecond.
inline Picoseconds to_picos(Seconds s) {
  return Picoseconds(static_cast<std::int64_t>(std::llround(s.count() * 1e12)));
}

inline Seconds to_seconds(Picoseconds ps) {
  return Seconds(static_cast<double>(ps.count()) * 1e-12);
}

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) {
  return (a + b - 1) / b;
}

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user configuration (flags, config files).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed trace or preset file.
class ParseError : public Error {
 public:
  using Error::Error;
};

// A request that can never be served with the configured memory.
class InfeasibleError : public Error {
 public:
  using Error::Error;
};

}  // namespace servesim
