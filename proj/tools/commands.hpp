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

// commands.hpp: the synthesize / sweep / check / info subcommands. Each
// returns the process exit code; diagnostics go to the supplied log stream.

#pragma once

#include "problem_file.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

namespace robustpulse::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitNotConverged = 2;

inline constexpr const char* kThreadsEnv = "ROBUSTPULSE_THREADS";

struct RunOptions {
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  unsigned threads = 1;
  bool strict = false;
};

/// ROBUSTPULSE_THREADS if set to a nonnegative integer (0 = all cores), else 1.
inline unsigned default_threads() {
  const char* env = std::getenv(kThreadsEnv);
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 0) throw ProblemError(std::string(kThreadsEnv) + " must be a nonnegative integer");
  return n == 0 ? std::max(1u, std::thread::hardware_concurrency()) : static_cast<unsigned>(n);
}

inline std::string csv_real(double x) { return std::isnan(x) ? "nan" : format_real(x); }

/// Binary mode keeps LF line endings on every platform.
inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ProblemError("cannot write " + path.string());
  return os;
}

inline void apply_seed(ProblemFile& pf, std::uint64_t seed) {
  pf.initial.seed = seed;
  pf.evaluation.seed = seed;
  if (pf.document["initial_controls"].contains("seed")) pf.document["initial_controls"]["seed"] = seed;
  pf.document["evaluation"]["seed"] = seed;
}

inline ProblemFile load_for_run(const std::string& path, const RunOptions& opts, std::ostream& log) {
  ProblemFile pf = load_problem(path, opts.strict);
  if (opts.seed) apply_seed(pf, *opts.seed);
  for (const auto& w : pf.warnings) log << "warning: " << w << "\n";
  return pf;
}

// ---------------------------------------------------------------------------
// controls.csv

struct LabeledControls {
  std::vector<std::string> labels;
  std::vector<RVector> values;
};

inline void write_controls_csv(std::ostream& os, const ControlProblem& problem, const LabeledControls& c) {
  os << "pulse,control";
  for (const auto& l : c.labels) os << ',' << l;
  os << '\n';
  for (int j = 0; j < problem.num_controls(); ++j) {
    for (int k = 0; k < problem.pulses(); ++k) {
      os << k << ',' << j;
      for (const auto& v : c.values) os << ',' << format_real(v(problem.index(k, j)));
      os << '\n';
    }
  }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline LabeledControls read_controls_csv(const std::string& path, const ControlProblem& problem) {
  std::istringstream in(read_text_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ProblemError(path + ": empty controls file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_line(line);
  if (header.size() < 3 || header[0] != "pulse" || header[1] != "control") {
    throw ProblemError(path + ": header must start with pulse,control and name at least one control set");
  }
  LabeledControls c;
  c.labels.assign(header.begin() + 2, header.end());
  c.values.assign(c.labels.size(), RVector::Constant(problem.num_variables(), std::nan("")));
  std::vector<bool> seen(static_cast<std::size_t>(problem.num_variables()), false);
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    const std::string where = path + ": line " + std::to_string(lineno);
    if (cells.size() != header.size()) throw ProblemError(where + ": expected " + std::to_string(header.size()) + " cells");
    int k = 0, j = 0;
    try {
      k = std::stoi(cells[0]);
      j = std::stoi(cells[1]);
    } catch (const std::exception&) {
      throw ProblemError(where + ": pulse and control must be integers");
    }
    if (k < 0 || k >= problem.pulses() || j < 0 || j >= problem.num_controls()) {
      throw ProblemError(where + ": pulse/control index outside the problem dimensions (N = " +
                         std::to_string(problem.pulses()) + ", m = " + std::to_string(problem.num_controls()) + ")");
    }
    const auto idx = problem.index(k, j);
    if (seen[static_cast<std::size_t>(idx)]) throw ProblemError(where + ": duplicate entry");
    seen[static_cast<std::size_t>(idx)] = true;
    for (std::size_t l = 0; l < c.labels.size(); ++l) {
      try {
        c.values[l](idx) = std::stod(cells[l + 2]);
      } catch (const std::exception&) {
        throw ProblemError(where + ": malformed amplitude '" + cells[l + 2] + "'");
      }
    }
  }
  for (bool s : seen) {
    if (!s) {
      throw ProblemError(path + ": controls do not match the problem dimensions (expected N m = " +
                         std::to_string(problem.num_variables()) + " rows)");
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// sweep

inline SweepReport sweep_controls(const ProblemFile& pf, const LabeledControls& c, unsigned threads) {
  SweepReport report;
  for (std::size_t l = 0; l < c.labels.size(); ++l) {
    SweepOptions o;
    o.samples_per_point = pf.evaluation.samples;
    o.seed = pf.evaluation.seed;
    o.mode = pf.evaluation.mode;
    o.threads = threads;
    o.label = c.labels[l];
    SweepReport part = monte_carlo_sweep(pf.system(), c.values[l], pf.evaluation_terms(), pf.evaluation.magnitudes, o);
    if (l > 0) part.warnings.clear();
    report.append(part);
  }
  return report;
}

inline void write_sweep_file(const std::filesystem::path& dir, const SweepReport& report) {
  std::ofstream os = open_output(dir / "sweep.csv");
  write_sweep_csv(os, report);
}

// ---------------------------------------------------------------------------
// synthesize

inline Json summary_json(const ProblemFile& pf, const RunResult& r, int exit_code) {
  Json s = Json::object();
  s["software"] = "robustpulse";
  s["version"] = kVersion;
  s["status"] = to_string(r.status);
  s["exit_code"] = exit_code;
  s["final_fidelity"] = r.fidelity;
  s["final_robustness"] = r.robustness;
  s["final_f0"] = r.final_f0;
  const auto sw = r.trace.switch_iteration();
  s["switch_iteration"] = sw ? Json(*sw) : Json(nullptr);
  s["iterations"] = r.trace.rows.empty() ? 0 : r.trace.rows.back().iter;
  s["seed"] = Json{{"initial_controls", pf.initial.seed}, {"evaluation", pf.evaluation.seed}};
  s["warnings"] = r.warnings;
  s["config"] = pf.document;
  return s;
}

inline int cmd_synthesize(const std::string& problem_path, const RunOptions& opts, std::ostream& log) {
  ProblemFile pf = load_for_run(problem_path, opts, log);
  const ControlProblem& problem = pf.system();
  const std::filesystem::path dir = opts.out_dir.empty() ? std::filesystem::path(".") : std::filesystem::path(opts.out_dir);
  std::filesystem::create_directories(dir);

  OptimizerConfig config = pf.optimizer;
  config.threads = opts.threads;
  const RVector v0 = pf.initial_controls();

  std::ofstream trace = open_output(dir / "trace.csv");
  trace << "iter,stage,F_nom,J_rbst,step_norm,lambda,gamma\n" << std::flush;
  const TraceSink sink = [&](const TraceRow& row) {
    trace << row.iter << ',' << row.stage << ',' << csv_real(row.fidelity) << ',' << csv_real(row.robustness) << ','
          << csv_real(row.step_norm) << ',' << csv_real(row.lambda) << ',' << csv_real(row.gamma) << '\n'
          << std::flush;
  };
  const RunResult result = run_two_stage(problem, pf.model, config, v0, sink);
  trace.close();
  for (const auto& w : result.warnings) log << "warning: " << w << "\n";

  {
    std::ofstream os = open_output(dir / "controls.csv");
    write_controls_csv(os, problem, {{"initial", "stage1", "robust"}, {v0, result.v_switch, result.v}});
  }
  const SweepReport report = sweep_controls(pf, {{"stage1", "robust"}, {result.v_switch, result.v}}, opts.threads);
  for (const auto& w : report.warnings) log << "warning: " << w << "\n";
  write_sweep_file(dir, report);

  const int code = result.status == RunStatus::converged ? kExitOk : kExitNotConverged;
  {
    std::ofstream os = open_output(dir / "summary.json");
    os << summary_json(pf, result, code).dump(2) << '\n';
  }
  log << "status " << to_string(result.status) << ", F_nom " << format_real(result.fidelity) << ", J_rbst "
      << format_real(result.robustness) << "\n";
  return code;
}

inline int cmd_sweep(const std::string& problem_path, const std::string& controls_path, const RunOptions& opts,
                     std::ostream& log) {
  ProblemFile pf = load_for_run(problem_path, opts, log);
  const LabeledControls c = read_controls_csv(controls_path, pf.system());
  const SweepReport report = sweep_controls(pf, c, opts.threads);
  for (const auto& w : report.warnings) log << "warning: " << w << "\n";
  const std::filesystem::path dir = opts.out_dir.empty() ? std::filesystem::path(".") : std::filesystem::path(opts.out_dir);
  std::filesystem::create_directories(dir);
  write_sweep_file(dir, report);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// check

inline constexpr double kBoundTolerance = 1e-12;

struct CheckRow {
  std::string label;
  double magnitude = 0.0;
  int sample = 0;
  BoundCheck check;
};

inline std::vector<CheckRow> check_controls(const ProblemFile& pf, const LabeledControls& c) {
  std::vector<CheckRow> rows;
  const auto& mags = pf.evaluation.magnitudes;
  for (std::size_t l = 0; l < c.labels.size(); ++l) {
    for (std::size_t i = 0; i < mags.size(); ++i) {
      for (int k = 0; k < pf.evaluation.check_samples; ++k) {
        std::mt19937_64 rng(sample_seed(pf.evaluation.seed, i, static_cast<std::size_t>(k)));
        const PerturbationSamples h =
            sample_joint_perturbation(pf.evaluation_terms(), pf.system(), c.values[l], mags[i], rng, pf.evaluation.mode);
        rows.push_back({c.labels[l], mags[i], k, check_averaging_bounds(pf.system(), c.values[l], h)});
      }
    }
  }
  return rows;
}

inline void write_check_csv(std::ostream& os, const std::vector<CheckRow>& rows) {
  os << "label,magnitude,sample,delta,gamma_bar,gamma_tilde,measured_avg,bound_avg,ratio_avg,measured_dev,bound_dev,"
        "ratio_dev,residual,holds\n";
  for (const auto& r : rows) {
    const BoundCheck& b = r.check;
    os << r.label << ',' << format_real(r.magnitude) << ',' << r.sample << ',' << format_real(b.delta) << ','
       << format_real(b.gamma_bar) << ',' << format_real(b.gamma_tilde) << ',' << format_real(b.measured_avg) << ','
       << format_real(b.bound_avg) << ',' << format_real(b.ratio_avg()) << ',' << format_real(b.measured_dev) << ','
       << format_real(b.bound_dev) << ',' << format_real(b.ratio_dev()) << ',' << format_real(b.residual) << ','
       << (b.holds(kBoundTolerance) ? 1 : 0) << '\n';
  }
}

inline int cmd_check(const std::string& problem_path, const std::string& controls_path, const RunOptions& opts,
                     std::ostream& out, std::ostream& log) {
  ProblemFile pf = load_for_run(problem_path, opts, log);
  const LabeledControls c = read_controls_csv(controls_path, pf.system());
  const auto rows = check_controls(pf, c);
  if (opts.out_dir.empty()) {
    write_check_csv(out, rows);
  } else {
    std::filesystem::create_directories(opts.out_dir);
    std::ofstream os = open_output(std::filesystem::path(opts.out_dir) / "check.csv");
    write_check_csv(os, rows);
  }
  std::size_t violations = 0;
  double worst_avg = 0.0, worst_dev = 0.0;
  for (const auto& r : rows) {
    if (!r.check.holds(kBoundTolerance)) ++violations;
    worst_avg = std::max(worst_avg, r.check.ratio_avg());
    worst_dev = std::max(worst_dev, r.check.ratio_dev());
  }
  log << rows.size() << " realizations, " << violations << " violations, largest ratios " << format_real(worst_avg)
      << " (average) and " << format_real(worst_dev) << " (deviation)\n";
  return violations == 0 ? kExitOk : kExitNotConverged;
}

// ---------------------------------------------------------------------------
// info

inline int cmd_info(std::ostream& out) {
  out << "robustpulse " << kVersion << "\n";
  out << "eigen " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION << "\n";
  out << "uncertainty types: constant_param energy_bounded bias_drift time_varying pwc_noise additive_ctrl "
         "multiplicative_ctrl actuator cross_coupling lindblad bipartite\n";
  out << "named targets: I X Y Z H CNOT\n";
  out << "norms: inf two fro fro_sq\n";
  unsigned threads = 1;
  try {
    threads = default_threads();
  } catch (const std::exception&) {
  }
  out << "default threads: " << threads << " (" << kThreadsEnv << ")\n";
  out << "hardware threads: " << std::thread::hardware_concurrency() << "\n";
  return kExitOk;
}

}  // namespace robustpulse::cli
