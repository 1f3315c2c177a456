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

#include "test_support.hpp"

#include <catch_amalgamated.hpp>

using namespace robustpulse;
using namespace robustpulse::testing;
using Catch::Approx;
using linalg::pauli;

namespace {

double fid(const ControlProblem& p, const RVector& v) { return nominal_fidelity(propagate_nominal(p, v), p.target()); }

ControlProblem single_pulse(std::optional<ControlBounds> bounds = std::nullopt) {
  return ControlProblem(CMatrix::Zero(2, 2), {pauli('X')}, linalg::expm_hermitian(pauli('X'), 1.0), 1.0, 1, 1, bounds);
}

struct DualInstance {
  RVector gf, gj;
  RMatrix hf, hj;
  double fidelity, f0, alpha;
};

// Fidelity Hessian negative semidefinite (as at a landscape top), small
// fidelity gradient, robustness Hessian of either sign.
DualInstance random_dual_instance(std::mt19937_64& rng, int dim) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DualInstance d;
  const RMatrix a = random_vector(rng, dim * dim).reshaped(dim, dim);
  d.hf = -(a * a.transpose()) / dim - 0.1 * RMatrix::Identity(dim, dim);
  const RMatrix b = random_vector(rng, dim * dim).reshaped(dim, dim);
  d.hj = 0.05 * (b + b.transpose()) / std::sqrt(double(dim));
  d.gf = random_vector(rng, dim, 1e-3);
  d.gj = random_vector(rng, dim, 0.1);
  d.alpha = 1.0 + 4.0 * u(rng);
  d.f0 = 1.0 - 1e-4;
  d.fidelity = d.f0 + 1e-4 * u(rng) * (u(rng) < 0.8 ? 1.0 : 1e-3);
  return d;
}

double quadratic_fidelity(const DualInstance& d, const RVector& s) {
  return d.fidelity + d.gf.dot(s) + 0.5 * s.dot(d.hf * s);
}

}  // namespace

TEST_CASE("stage 1 steps", "[optimizer]") {
  OptimizerConfig cfg;
  SECTION("stays put at a strict maximum") {
    RVector v(1);
    v << 1.0;
    const auto r = stage1_step(single_pulse(), v, cfg);
    CHECK(r.v(0) == 1.0);
  }
  SECTION("moves toward the maximum") {
    RVector v(1);
    v << 0.5;
    const auto r = stage1_step(single_pulse(), v, cfg);
    CHECK(r.v(0) > 0.5);
    CHECK(r.fidelity > fid(single_pulse(), v));
  }
  SECTION("projects onto the bounds") {
    RVector v(1);
    v << 0.5;
    const auto p = single_pulse(ControlBounds{-0.6, 0.6});
    const auto r = stage1_step(p, v, cfg);
    CHECK(r.v(0) <= 0.6);
    CHECK(r.v(0) > 0.5);
  }
  SECTION("monotone fidelity across accepted steps") {
    std::mt19937_64 rng(41);
    const ControlProblem p = random_qubit_problem(rng, 2, 4, 2);
    RVector v = random_vector(rng, 8);
    double f = fid(p, v), hint = 0.0;
    for (int k = 0; k < 30; ++k) {
      const auto r = stage1_step(p, v, cfg, &hint);
      CHECK(r.fidelity >= f);
      v = r.v;
      f = r.fidelity;
    }
  }
}

TEST_CASE("dual solver special cases", "[optimizer]") {
  const int dim = 4;
  std::mt19937_64 rng(42);
  SECTION("zero robustness gradient above the threshold") {
    const RMatrix hf = -RMatrix::Identity(dim, dim);
    const auto s = solve_dual(random_vector(rng, dim), hf, RVector::Zero(dim), RMatrix::Zero(dim, dim), 0.999, 0.99, 5.0);
    REQUIRE(s.feasible);
    CHECK(s.lambda == 0.0);
    CHECK(s.gamma == 0.0);
    CHECK(s.step.norm() == 0.0);
  }
  SECTION("flat models give a pure robustness step") {
    const RVector gj = random_vector(rng, dim);
    const double alpha = 3.0;
    const auto s = solve_dual(RVector::Zero(dim), RMatrix::Zero(dim, dim), gj, RMatrix::Zero(dim, dim), 0.999, 0.99, alpha);
    REQUIRE(s.feasible);
    CHECK(s.lambda == 0.0);
    CHECK((s.step + alpha * gj).norm() <= 1e-12);
    CHECK(s.gamma == Approx(-alpha * alpha * gj.squaredNorm()).epsilon(1e-12));
  }
  SECTION("dimension and finiteness checks") {
    CHECK_THROWS(solve_dual(RVector::Zero(2), RMatrix::Zero(3, 3), RVector::Zero(2), RMatrix::Zero(2, 2), 1.0, 0.5, 1.0));
    RVector bad = RVector::Zero(2);
    bad(0) = std::nan("");
    CHECK_THROWS(solve_dual(bad, RMatrix::Zero(2, 2), RVector::Zero(2), RMatrix::Zero(2, 2), 1.0, 0.5, 1.0));
  }
}

TEST_CASE("dual solver properties", "[optimizer][property]") {
  std::mt19937_64 rng(43);
  int checked_grid = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int dim = 1 + trial % 8;
    const DualInstance d = random_dual_instance(rng, dim);
    const auto s = solve_dual(d.gf, d.hf, d.gj, d.hj, d.fidelity, d.f0, d.alpha);
    REQUIRE(s.feasible);
    // sign: F_nom > f0 so the zero step is feasible
    CHECK(s.gamma <= 1e-12);
    // gamma = primal - 2 lambda (F_quad - f0), primal = |s|^2 + 2 alpha (J_quad - J)
    const double jq = d.gj.dot(s.step) + 0.5 * s.step.dot(d.hj * s.step);
    const double fq = quadratic_fidelity(d, s.step);
    CHECK(std::abs(dual_primal_objective(s.step, d.gj, d.hj, d.alpha) - 2 * s.lambda * (fq - d.f0) - s.gamma) <=
          1e-9 * std::max(1.0, std::abs(s.gamma)));
    CHECK(std::abs(jq - (s.gamma - s.step.squaredNorm() + 2 * s.lambda * (fq - d.f0)) / (2 * d.alpha)) <= 1e-9);
    CHECK(jq <= 1e-9);
    if (fq > d.f0 + 1e-9) {
      CHECK(s.lambda <= 1e-6);
      CHECK(std::abs(dual_primal_objective(s.step, d.gj, d.hj, d.alpha) - s.gamma) <= 1e-6);
    }
    CHECK(fq >= d.f0 - 1e-8);
    if (trial % 6 == 0) {
      // coarse grid: the golden-section value is never beaten
      const detail::DualProblem dp{d.gf, d.hf, d.gj, d.hj, d.fidelity - d.f0, d.alpha, 1e-10};
      double best = -1e300;
      for (int k = 0; k <= 20000; ++k) best = std::max(best, dp.gamma(1e3 * k / 20000.0));
      CHECK(s.gamma >= best - 1e-9);
      ++checked_grid;
    }
  }
  CHECK(checked_grid == 10);
}

TEST_CASE("dual solver with an infeasible origin", "[optimizer]") {
  // I + alpha hJ is indefinite at lambda = 0; the feasible set starts later
  const int dim = 3;
  RMatrix hj = RMatrix::Zero(dim, dim);
  hj(0, 0) = -1.0;
  const RMatrix hf = -RMatrix::Identity(dim, dim);
  RVector gj(dim);
  gj << 0.3, -0.2, 0.1;
  const auto s = solve_dual(RVector::Constant(dim, 1e-3), hf, gj, hj, 0.9999, 0.999, 2.0);
  REQUIRE(s.feasible);
  CHECK(s.lambda >= 1.0 - 1e-6);
  CHECK(s.gamma <= 1e-12);
}

TEST_CASE("stage 2 steps", "[optimizer]") {
  const ControlProblem p = fig1_problem();
  OptimizerConfig cfg;
  SECTION("flat robustness measure gives no step") {
    const RobustnessModel flat{{ConstantParamSpec{{{linalg::identity(2)}}, ParamBound::peak, 1.0, {}}}};
    std::mt19937_64 rng(44);
    const RVector v = random_vector(rng, 5);
    const double f = fid(p, v);
    const auto r = stage2_step(p, v, flat, cfg, f - 1e-6);
    CHECK(r.step_norm <= 1e-6);
    CHECK(r.robustness == Approx(robustness_value(flat, p, v)).epsilon(1e-12));
  }
  SECTION("quadratic model decreases") {
    const RobustnessModel m{{ConstantParamSpec{{{pauli('Z')}}, ParamBound::peak, 1.0, {}}}};
    const RVector v = RVector::Constant(5, 2.98);
    const auto fm = fidelity_model(p, v);
    const auto jm = robustness_quadratic(m, p, v);
    const auto s = solve_dual(fm.gradient, fm.hessian, jm.gradient, jm.hessian, fm.value, fm.value - 1e-6, cfg.alpha);
    REQUIRE(s.feasible);
    CHECK(s.gamma <= 0.0);
    CHECK(jm.predict(s.step) <= jm.value + 1e-12);
  }
}

TEST_CASE("two-stage run on the Fig. 1 system", "[optimizer]") {
  const ControlProblem p = fig1_problem();
  const RobustnessModel m{{ConstantParamSpec{{{pauli('Z')}}, ParamBound::peak, 1.0, {}}}};
  OptimizerConfig cfg;
  const RVector v0 = RVector::Constant(5, 2.0);
  std::vector<TraceRow> streamed;
  const RunResult r = run_two_stage(p, m, cfg, v0, [&](const TraceRow& row) { streamed.push_back(row); });
  REQUIRE(r.trace.rows.size() == streamed.size());
  const auto sw = r.trace.switch_iteration();
  REQUIRE(sw);
  CHECK(*sw > 1);
  CHECK(r.status == RunStatus::converged);
  CHECK(r.fidelity >= cfg.f0 - cfg.slack(cfg.f0));

  // Stage 2 holds the fidelity near the threshold while J trends down
  double j_switch = robustness_value(m, p, r.v_switch);
  for (const auto& row : r.trace.rows) {
    if (row.stage == 2) CHECK(row.fidelity >= cfg.f0 - cfg.slack(cfg.f0));
  }
  CHECK(r.robustness < 0.1 * j_switch);

  SECTION("restarting from the robust control stops sooner without losing ground") {
    // the peak measure is nonsmooth at the optimum, so J jitters at the 1e-3 level there
    const RunResult again = run_two_stage(p, m, cfg, r.v);
    CHECK(again.status == RunStatus::converged);
    CHECK(again.trace.rows.size() < r.trace.rows.size() / 4);
    CHECK(again.robustness <= r.robustness * (1 + 1e-2));
  }
  SECTION("identical inputs give identical traces") {
    OptimizerConfig threaded = cfg;
    threaded.threads = 3;
    const RunResult b = run_two_stage(p, m, threaded, v0);
    REQUIRE(b.trace.rows.size() == r.trace.rows.size());
    for (std::size_t k = 0; k < b.trace.rows.size(); ++k) {
      CHECK(b.trace.rows[k].fidelity == r.trace.rows[k].fidelity);
      CHECK(b.trace.rows[k].robustness == r.trace.rows[k].robustness);
    }
    CHECK(b.v == r.v);
  }
}

TEST_CASE("threshold schedule re-engages stage 1", "[optimizer]") {
  const ControlProblem p = fig1_problem();
  const RobustnessModel m{{ConstantParamSpec{{{pauli('Z')}}, ParamBound::peak, 1.0, {}}}};
  OptimizerConfig cfg;
  cfg.f0 = 1 - 1e-3;
  cfg.schedule = {{1 - 1e-6, 15}};
  cfg.max_iters_stage2 = 200;
  const RunResult r = run_two_stage(p, m, cfg, RVector::Constant(5, 2.0));
  bool seen2 = false, climbed_again = false;
  for (const auto& row : r.trace.rows) {
    if (row.stage == 2) seen2 = true;
    if (seen2 && row.stage == 1 && row.f0 > 1 - 1e-5) climbed_again = true;
  }
  CHECK(climbed_again);
  CHECK(r.final_f0 == 1 - 1e-6);
  CHECK(r.fidelity >= 1 - 1e-6 - cfg.slack(1 - 1e-6));
}

TEST_CASE("empty model stops at the threshold", "[optimizer]") {
  const ControlProblem p = fig1_problem();
  OptimizerConfig cfg;
  const RunResult r = run_two_stage(p, {}, cfg, RVector::Constant(5, 2.0));
  CHECK(r.fidelity >= cfg.f0);
  CHECK(r.status == RunStatus::converged);
  REQUIRE_FALSE(r.warnings.empty());
  CHECK(r.warnings.front().find("no-op") != std::string::npos);
  for (const auto& row : r.trace.rows) CHECK(row.stage == 1);
}

TEST_CASE("configuration validation", "[optimizer]") {
  OptimizerConfig cfg;
  cfg.f0 = 1.0;
  CHECK_THROWS(cfg.validate());
  cfg.f0 = 0.9;
  cfg.alpha = 0.0;
  CHECK_THROWS(cfg.validate());
  cfg.alpha = 1.0;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.slack(1 - 1e-6) == Approx(1e-5));
}
