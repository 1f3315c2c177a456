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
#include "test_support.hpp"

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

using namespace robustpulse;
using namespace robustpulse::cli;
using namespace robustpulse::testing;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("robustpulse_cli_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string fig1_path() { return source_path("problems/fig1_const.json"); }

Json fig1_json() { return parse_json_text(read_text_file(fig1_path())); }

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::istringstream in(read_text_file(p.string()));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) rows.push_back(split_csv_line(line));
  return rows;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream os = open_output(p);
  os << text;
}

// One synthesize run of the Fig. 1 problem shared by several cases.
const fs::path& fig1_run() {
  static const fs::path dir = [] {
    const fs::path d = scratch("fig1");
    std::ostringstream log;
    const int code = cmd_synthesize(fig1_path(), {d.string(), std::nullopt, 1, true}, log);
    if (code != kExitOk) throw std::runtime_error("Fig. 1 synthesize exited with " + std::to_string(code));
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("problem files round-trip", "[cli]") {
  for (const char* name : {"fig1_const", "fig2_additive", "fig3_multiplicative", "fig4_bias_mult", "amp_phase",
                           "fig5_cross"}) {
    INFO(name);
    const ProblemFile a = load_problem(source_path(std::string("problems/") + name + ".json"), true);
    const std::string once = serialize_problem(a);
    const ProblemFile b = parse_problem_text(once, true);
    CHECK(serialize_problem(b) == once);
    CHECK(a.system().num_variables() == b.system().num_variables());
    CHECK(a.model.terms.size() == b.model.terms.size());
  }
}

TEST_CASE("problem file errors", "[cli]") {
  SECTION("unknown keys") {
    Json doc = fig1_json();
    doc["system"]["pulsess"] = 4;
    CHECK_THROWS_AS(parse_problem(doc, true), ProblemError);
    CHECK(message_of([&] { parse_problem(doc, true); }).find("system.pulsess") != std::string::npos);
    const ProblemFile lax = parse_problem(doc, false);
    REQUIRE_FALSE(lax.warnings.empty());
    CHECK(lax.warnings.front().find("pulsess") != std::string::npos);
  }
  SECTION("malformed Pauli strings name the token") {
    Json doc = fig1_json();
    doc["system"]["drift"] = "Q";
    const std::string msg = message_of([&] { parse_problem(doc, true); });
    CHECK(msg.find("'Q'") != std::string::npos);
  }
  SECTION("JSON syntax errors carry a line number") {
    const std::string msg = message_of([] { parse_problem_text("{\n  \"system\": {\n    \"dim\": 2,,\n", true); });
    CHECK(msg.find("line 3") != std::string::npos);
  }
  SECTION("range checks") {
    Json doc = fig1_json();
    doc["system"]["pulses"] = 0;
    CHECK_THROWS(parse_problem(doc, true));
    doc = fig1_json();
    doc["optimizer"]["f0"] = 1.5;
    CHECK_THROWS(parse_problem(doc, true));
    doc = fig1_json();
    doc["uncertainty"][0]["operators"] = Json::array({Json::array({Json::array({"Z", 2.0})})});
    CHECK_THROWS(parse_problem(doc, true));
    CHECK_NOTHROW(parse_problem(doc, false));
  }
  SECTION("initial controls") {
    Json doc = fig1_json();
    doc["initial_controls"] = Json{{"values", Json::array({1.0, 2.0})}};
    CHECK_THROWS(parse_problem(doc, true));
    doc["initial_controls"] = Json{{"constant", 0.0}, {"noise", 1.0}, {"seed", 5}};
    const ProblemFile a = parse_problem(doc, true), b = parse_problem(doc, true);
    CHECK(a.initial_controls() == b.initial_controls());
    CHECK(a.initial_controls().norm() > 0.0);
  }
}

TEST_CASE("synthesize on the Fig. 1 problem", "[cli]") {
  const fs::path& dir = fig1_run();
  for (const char* f : {"trace.csv", "controls.csv", "sweep.csv", "summary.json"}) CHECK(fs::exists(dir / f));

  const auto trace = read_csv(dir / "trace.csv");
  REQUIRE(trace.size() > 2);
  CHECK(trace[0] == std::vector<std::string>{"iter", "stage", "F_nom", "J_rbst", "step_norm", "lambda", "gamma"});
  bool switched = false;
  for (std::size_t i = 2; i < trace.size(); ++i) switched |= trace[i - 1][1] == "1" && trace[i][1] == "2";
  CHECK(switched);
  CHECK(trace[1][5] == "nan");

  const Json summary = parse_json_text(read_text_file((dir / "summary.json").string()));
  CHECK(summary["status"] == "converged");
  CHECK(summary["exit_code"] == 0);
  CHECK(summary["final_fidelity"].get<double>() >= 1 - 1e-5);
  CHECK(summary["switch_iteration"].is_number_integer());
  CHECK(summary["config"]["system"]["pulses"] == 5);

  const auto controls = read_csv(dir / "controls.csv");
  CHECK(controls[0] == std::vector<std::string>{"pulse", "control", "initial", "stage1", "robust"});
  CHECK(controls.size() == 6);

  // worst-case infidelity at the edges of the detuning range
  const auto sweep = read_csv(dir / "sweep.csv");
  double worst_stage1 = 0.0, worst_robust = 0.0;
  for (std::size_t i = 1; i < sweep.size(); ++i) {
    if (std::abs(std::abs(std::stod(sweep[i][0])) - 0.05) > 1e-12) continue;
    const double infid = 1.0 - std::stod(sweep[i][3]);
    (sweep[i][5] == "robust" ? worst_robust : worst_stage1) =
        std::max(sweep[i][5] == "robust" ? worst_robust : worst_stage1, infid);
  }
  CHECK(worst_robust > 0.0);
  CHECK(worst_stage1 >= 10.0 * worst_robust);
}

TEST_CASE("sweep subcommand", "[cli]") {
  const fs::path& run = fig1_run();
  const ProblemFile pf = load_problem(fig1_path());
  const LabeledControls c = read_controls_csv((run / "controls.csv").string(), pf.system());
  REQUIRE(c.labels.size() == 3);

  SECTION("zero magnitude gives the nominal fidelity") {
    Json doc = fig1_json();
    doc["evaluation"]["magnitudes"] = Json::array({0.0});
    const fs::path dir = scratch("sweep0");
    write_file(dir / "p.json", doc.dump(2));
    std::ostringstream log;
    REQUIRE(cmd_sweep((dir / "p.json").string(), (run / "controls.csv").string(), {dir.string(), std::nullopt, 1, true},
                      log) == kExitOk);
    const auto rows = read_csv(dir / "sweep.csv");
    REQUIRE(rows.size() == 4);
    for (std::size_t l = 0; l < 3; ++l) {
      const double f = nominal_fidelity(propagate_nominal(pf.system(), c.values[l]), pf.system().target());
      CHECK(std::stod(rows[l + 1][2]) == Catch::Approx(f).epsilon(1e-14));
      CHECK(rows[l + 1][5] == c.labels[l]);
    }
  }
  SECTION("two control sets give two groups") {
    const fs::path dir = scratch("sweep2");
    std::ostringstream os;
    write_controls_csv(os, pf.system(), {{"a", "b"}, {c.values[1], c.values[2]}});
    write_file(dir / "controls.csv", os.str());
    std::ostringstream log;
    REQUIRE(cmd_sweep(fig1_path(), (dir / "controls.csv").string(), {dir.string(), std::nullopt, 1, true}, log) ==
            kExitOk);
    const auto rows = read_csv(dir / "sweep.csv");
    CHECK(rows.size() == 1 + 2 * 11);
    CHECK(rows[1][5] == "a");
    CHECK(rows.back()[5] == "b");
  }
  SECTION("controls must match the problem dimensions") {
    const fs::path dir = scratch("sweep_bad");
    write_file(dir / "controls.csv", "pulse,control,x\n0,0,1.0\n1,0,1.0\n");
    std::ostringstream log;
    const std::string msg = message_of([&] {
      cmd_sweep(fig1_path(), (dir / "controls.csv").string(), {dir.string(), std::nullopt, 1, true}, log);
    });
    CHECK(msg.find("dimensions") != std::string::npos);
    write_file(dir / "controls.csv", "pulse,control,x\n0,1,1.0\n");
    CHECK_THROWS_AS(read_controls_csv((dir / "controls.csv").string(), pf.system()), ProblemError);
    write_file(dir / "controls.csv", "pulse,ctrl,x\n");
    CHECK_THROWS_AS(read_controls_csv((dir / "controls.csv").string(), pf.system()), ProblemError);
  }
}

TEST_CASE("check subcommand", "[cli]") {
  const fs::path& run = fig1_run();
  const fs::path dir = scratch("check");
  std::ostringstream out, log;
  const int code = cmd_check(fig1_path(), (run / "controls.csv").string(), {dir.string(), std::nullopt, 1, true}, out, log);
  CHECK(code == kExitOk);
  CHECK(log.str().find("0 violations") != std::string::npos);
  const auto rows = read_csv(dir / "check.csv");
  REQUIRE(rows.size() > 1);
  CHECK(rows[0][8] == "ratio_avg");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i].back() == "1");
    CHECK(std::stod(rows[i][8]) <= 1.0);
  }
}

TEST_CASE("empty uncertainty list warns", "[cli]") {
  Json doc = fig1_json();
  doc["uncertainty"] = Json::array();
  doc["evaluation"].erase("uncertainty");
  const fs::path dir = scratch("empty");
  write_file(dir / "p.json", doc.dump(2));
  std::ostringstream log;
  const int code = cmd_synthesize((dir / "p.json").string(), {(dir / "out").string(), std::nullopt, 1, true}, log);
  CHECK(code == kExitOk);
  CHECK(log.str().find("no-op") != std::string::npos);
}

TEST_CASE("synthesize output is reproducible", "[cli]") {
  const fs::path& first = fig1_run();
  const fs::path second = scratch("fig1_again");
  std::ostringstream log;
  REQUIRE(cmd_synthesize(fig1_path(), {second.string(), std::nullopt, 2, true}, log) == kExitOk);
  for (const char* f : {"trace.csv", "controls.csv", "sweep.csv", "summary.json"}) {
    INFO(f);
    CHECK(read_text_file((first / f).string()) == read_text_file((second / f).string()));
  }
}

TEST_CASE("seed override", "[cli]") {
  Json doc = parse_json_text(read_text_file(source_path("problems/fig3_multiplicative.json")));
  ProblemFile pf = parse_problem(doc, true);
  const RVector before = pf.initial_controls();
  apply_seed(pf, 1234);
  CHECK(pf.initial.seed == 1234);
  CHECK(pf.evaluation.seed == 1234);
  CHECK(pf.document["evaluation"]["seed"] == 1234);
  CHECK(pf.initial_controls() != before);
}

TEST_CASE("thread count from the environment", "[cli]") {
  ::setenv(kThreadsEnv, "3", 1);
  CHECK(default_threads() == 3);
  ::setenv(kThreadsEnv, "0", 1);
  CHECK(default_threads() >= 1);
  ::setenv(kThreadsEnv, "many", 1);
  CHECK_THROWS_AS(default_threads(), ProblemError);
  ::unsetenv(kThreadsEnv);
  CHECK(default_threads() == 1);
  std::ostringstream os;
  CHECK(cmd_info(os) == kExitOk);
  CHECK(os.str().find(kVersion) != std::string::npos);
}
