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

// Synthesizes a Poisson request trace from a table of (input, output) length
// pairs.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "servesim/workload.h"

int main(int argc, char** argv) {
  std::string pairs;
  std::string output;
  double rate = 1.0;
  std::int64_t count = 100;
  std::uint64_t seed = 0;

  CLI::App app{"Poisson request trace generator"};
  app.add_option("--pairs", pairs, "TSV of input_len<TAB>output_len rows")->required();
  app.add_option("--rate", rate, "Mean arrivals per second")->capture_default_str();
  app.add_option("--count", count, "Number of requests")->capture_default_str();
  app.add_option("--seed", seed, "Random seed")->capture_default_str();
  app.add_option("--output", output, "Output trace file (default: stdout)");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto lengths = servesim::load_length_pairs(pairs);
    const auto requests = servesim::synthesize_poisson(rate, count, lengths, seed);
    if (output.empty()) {
      servesim::write_trace(std::cout, requests);
    } else {
      std::ofstream out(output);
      if (!out) throw servesim::Error("cannot write " + output);
      servesim::write_trace(out, requests);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
