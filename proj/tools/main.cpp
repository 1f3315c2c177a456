// Copyright 2026 The robustpulse Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace robustpulse::cli;

  CLI::App app{"Robust quantum control pulse synthesis"};
  app.require_subcommand(1);

  RunOptions opts;
  std::string problem, controls;
  std::optional<unsigned> threads;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--out", opts.out_dir, "Output directory");
    sub->add_option("--seed", seed, "Override the initial-control and evaluation seeds");
    sub->add_option("--threads", threads, std::string("Worker threads (0 = all cores; default from ") + kThreadsEnv + ")");
    sub->add_flag("--strict", opts.strict, "Reject unknown keys and out-of-range operator norms");
  };

  auto* synth = app.add_subcommand("synthesize", "Run two-stage synthesis and write trace, controls, sweep, summary");
  synth->add_option("problem", problem, "Problem file (JSON)")->required();
  add_common(synth);

  auto* sweep = app.add_subcommand("sweep", "Monte-Carlo fidelity sweep for every control set in a controls file");
  sweep->add_option("problem", problem, "Problem file (JSON)")->required();
  sweep->add_option("controls", controls, "controls.csv")->required();
  add_common(sweep);

  auto* check = app.add_subcommand("check", "Check the averaging bounds on sampled realizations");
  check->add_option("problem", problem, "Problem file (JSON)")->required();
  check->add_option("controls", controls, "controls.csv")->required();
  add_common(check);

  auto* info = app.add_subcommand("info", "Print version and build information");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (info->parsed()) return cmd_info(std::cout);
    for (auto* sub : {synth, sweep, check}) {
      if (sub->parsed() && sub->count("--seed")) opts.seed = seed;
    }
    opts.threads = threads ? (*threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : *threads)
                           : default_threads();
    if (synth->parsed()) return cmd_synthesize(problem, opts, std::cerr);
    if (sweep->parsed()) return cmd_sweep(problem, controls, opts, std::cerr);
    if (check->parsed()) return cmd_check(problem, controls, opts, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
