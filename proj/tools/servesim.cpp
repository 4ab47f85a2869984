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

// Command-line driver: runs a trace through the serving simulator and writes
// throughput and component-time reports.

#include <iostream>

#include <CLI11.hpp>

#include "servesim/simulator.h"
#include "servesim/workload.h"

int main(int argc, char** argv) {
  servesim::RunConfig run;
  CLI::App app{"LLM serving system simulator"};
  app.option_defaults()->always_capture_default();

  auto* npu_num = app.add_option("--npu_num", run.npu_num, "Number of NPUs");
  auto* npu_group = app.add_option("--npu_group", run.npu_group, "Pipeline groups (hybrid)");
  app.add_option("--model_name", run.model_name, "Model preset");
  app.add_option("--max_batch", run.max_batch, "Maximum batch size, 0 = no limit");
  app.add_option("--batch_delay", run.batch_delay, "Batching delay in ms");
  app.add_option("--scheduling", run.scheduling, "Scheduling method {orca}");
  app.add_option("--parallel", run.parallel, "Parallelism {pipeline, tensor, hybrid}");
  app.add_option("--npu_mem", run.npu_mem, "NPU memory in GB");
  app.add_option("--kv_manage", run.kv_manage, "KV cache management {vllm, maxlen}");
  app.add_option("--pim_type", run.pim_type, "PIM usage {none, local, pool}");
  app.add_flag("--sub_batch", run.sub_batch, "Sub-batch interleaving with PIM");
  app.add_option("--dataset", run.dataset, "Request trace (TSV)")->required();
  app.add_option("--network", run.network, "Network config file");
  app.add_option("--output", run.output, "Output path prefix");
  app.add_flag("--gen", run.gen, "Skip the initiation phase");
  app.add_flag("--fast_run", run.fast_run, "Closed-form GEMM costs");

  CLI11_PARSE(app, argc, argv);

  try {
    auto system = servesim::load_system(run, servesim::config_dir(), npu_num->count() > 0,
                                        npu_group->count() > 0);
    run.validate();
    auto requests = servesim::load_trace(run.dataset);
    servesim::Simulator sim(run, std::move(system), std::move(requests));
    const auto summary = sim.run(&std::cout);
    servesim::write_reports(sim.throughput().samples(), summary.times, run.output);
    servesim::print_summary(std::cout, summary);
    return sim.scheduler().done() ? 0 : 1;
  } catch (const servesim::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
