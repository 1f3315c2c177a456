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

#include <sstream>

using namespace robustpulse;
using namespace robustpulse::testing;
using Catch::Approx;
using linalg::pauli;

namespace {

const UncertaintySpec kFig1Spec = ConstantParamSpec{{{pauli('Z')}}, ParamBound::peak, 0.05, {}};

PerturbationSamples constant_samples(const CMatrix& h, int m) { return PerturbationSamples(m, h); }

PerturbationSamples random_bounded_samples(std::mt19937_64& rng, int m, double delta) {
  PerturbationSamples h;
  for (int t = 0; t < m; ++t) {
    CMatrix x = random_hermitian(rng, 2);
    x *= delta / linalg::spectral_norm(x);
    h.push_back(x);
  }
  return h;
}

}  // namespace

TEST_CASE("sweep at zero magnitude reproduces the nominal fidelity", "[evaluation]") {
  std::mt19937_64 rng(51);
  const ControlProblem p = fig1_problem();
  const RVector v = random_vector(rng, 5);
  const double f = nominal_fidelity(propagate_nominal(p, v), p.target());
  const UncertaintySpec pwc = PwcNoiseSpec{{pauli('Z')}, 2, 0.05, PwcKind::probabilistic};
  const SweepReport r = monte_carlo_sweep(p, v, pwc, {0.0}, {10, 3});
  REQUIRE(r.rows.size() == 1);
  CHECK(r.rows[0].fid_mean == Approx(f).epsilon(1e-13));
  CHECK(r.rows[0].fid_min == Approx(f).epsilon(1e-13));
  CHECK(r.warnings.empty());
}

TEST_CASE("fixed-mode sweep equals direct propagation", "[evaluation]") {
  std::mt19937_64 rng(52);
  const ControlProblem p = fig1_problem();
  const RVector v = random_vector(rng, 5);
  const std::vector<double> thetas{-0.05, -0.02, 0.0, 0.03, 0.05};
  SweepOptions opt;
  opt.samples_per_point = 1;
  opt.mode = SamplingMode::fixed;
  const SweepReport r = monte_carlo_sweep(p, v, kFig1Spec, thetas, opt);
  REQUIRE(r.rows.size() == thetas.size());
  for (std::size_t i = 0; i < thetas.size(); ++i) {
    const double direct = perturbed_fidelity(p, v, constant_samples(thetas[i] * pauli('Z'), p.samples()));
    CHECK(r.rows[i].magnitude == thetas[i]);
    CHECK(r.rows[i].fid_mean == Approx(direct).epsilon(1e-14));
  }
}

TEST_CASE("sweep output and warnings", "[evaluation]") {
  const ControlProblem p = fig1_problem();
  const RVector v = RVector::Constant(5, 2.0);
  SweepOptions opt;
  opt.samples_per_point = 1;
  opt.mode = SamplingMode::fixed;
  opt.label = "nominal";
  const SweepReport r = monte_carlo_sweep(p, v, kFig1Spec, {0.1, 0.0}, opt);
  CHECK(r.rows.front().magnitude == 0.0);
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("exceeds") != std::string::npos);
  std::ostringstream os;
  write_sweep_csv(os, r);
  const std::string csv = os.str();
  CHECK(csv.rfind("magnitude,n_samples,fid_mean,fid_min,fid_max,label\n", 0) == 0);
  CHECK(csv.find(",nominal\n") != std::string::npos);
  CHECK(format_real(0.1) == "0.10000000000000001");
  CHECK_THROWS(monte_carlo_sweep(p, v, kFig1Spec, {0.0}, {0, 0}));
}

TEST_CASE("sweeps are deterministic and converge with samples", "[evaluation][property]") {
  std::mt19937_64 rng(53);
  const ControlProblem p = fig1_problem();
  const RVector v = random_vector(rng, 5);
  const UncertaintySpec spec = PwcNoiseSpec{{pauli('Z')}, 5, 0.05, PwcKind::probabilistic};
  SweepOptions a{100, 9, SamplingMode::random, 1, ""};
  SweepOptions b = a;
  b.threads = 4;
  const SweepReport ra = monte_carlo_sweep(p, v, spec, {0.05}, a);
  const SweepReport rb = monte_carlo_sweep(p, v, spec, {0.05}, b);
  CHECK(ra.rows[0].fid_mean == rb.rows[0].fid_mean);
  CHECK(ra.rows[0].fid_min == rb.rows[0].fid_min);

  SweepOptions dbl = a;
  dbl.samples_per_point = 200;
  const SweepReport rd = monte_carlo_sweep(p, v, spec, {0.05}, dbl);
  const double spread = ra.rows[0].fid_max - ra.rows[0].fid_min;
  CHECK(std::abs(rd.rows[0].fid_mean - ra.rows[0].fid_mean) <= 3 * spread / std::sqrt(100.0));
  // the first 100 draws of the longer sweep are the same draws
  CHECK(rd.rows[0].fid_min <= ra.rows[0].fid_min);
}

TEST_CASE("joint sweeps over several specs", "[evaluation]") {
  const RVector v = RVector::Constant(5, 2.0);
  const ControlProblem base = fig1_problem();
  const ControlProblem p = base.with_target(propagate_nominal(base, v).final());
  const std::vector<UncertaintySpec> both{kFig1Spec, PwcNoiseSpec{{pauli('Z')}, 5, 0.025, PwcKind::probabilistic}};
  const SweepReport r = monte_carlo_sweep(p, v, both, {0.0, 0.05}, {20, 1});
  CHECK(r.rows[0].fid_mean == Approx(1.0).epsilon(1e-13));
  CHECK(r.rows[1].fid_max < r.rows[0].fid_mean);
  const SweepReport none = monte_carlo_sweep(p, v, std::vector<UncertaintySpec>{}, {0.0}, {3, 1});
  CHECK(none.rows[0].fid_mean == Approx(r.rows[0].fid_mean).epsilon(1e-13));
}

TEST_CASE("robust Fig. 1 control tolerates a 5% detuning", "[evaluation]") {
  const ControlProblem p = fig1_problem();
  const RobustnessModel m{{ConstantParamSpec{{{pauli('Z')}}, ParamBound::peak, 1.0, {}}}};
  const RunResult run = run_two_stage(p, m, OptimizerConfig{}, RVector::Constant(5, 2.0));
  REQUIRE(run.status == RunStatus::converged);
  SweepOptions opt;
  opt.samples_per_point = 1;
  opt.mode = SamplingMode::fixed;
  const SweepReport robust = monte_carlo_sweep(p, run.v, kFig1Spec, {-0.05, 0.05}, opt);
  const SweepReport plain = monte_carlo_sweep(p, run.v_switch, kFig1Spec, {-0.05, 0.05}, opt);
  for (int i = 0; i < 2; ++i) {
    CHECK(robust.rows[i].fid_mean >= 1 - 1e-5);
    CHECK(1 - robust.rows[i].fid_mean <= 0.1 * (1 - plain.rows[i].fid_mean));
  }
}

TEST_CASE("interaction picture", "[evaluation]") {
  std::mt19937_64 rng(54);
  SECTION("zero perturbation") {
    const Trajectory traj = random_trajectory(rng, 2, 10);
    const InteractionResult ir = interaction_unitary(traj, constant_samples(CMatrix::Zero(2, 2), 10), 1.0);
    CHECK((ir.r.back() - linalg::identity(2)).norm() == 0.0);
    CHECK((ir.r_bar - linalg::identity(2)).norm() == 0.0);
  }
  SECTION("constant interaction-frame operator") {
    const Trajectory traj = random_trajectory(rng, 2, 12);
    const CMatrix g = random_hermitian(rng, 2, 0.1);
    PerturbationSamples h;
    for (int t = 1; t <= 12; ++t) h.push_back(traj.samples[t] * g * traj.samples[t].adjoint());
    const InteractionResult ir = interaction_unitary(traj, h, 2.0);
    CHECK((ir.r.back() - ir.r_bar).norm() <= 1e-12);
    CHECK((ir.g_avg - g).norm() <= 1e-12);
  }
  SECTION("factorization residual shrinks with the grid") {
    const ControlProblem coarse = fig1_problem(5, 100);
    const ControlProblem fine = fig1_problem(5, 400);
    const RVector v = RVector::Constant(5, 2.0);
    const double theta = 1e-4;
    const double rc =
        check_averaging_bounds(coarse, v, constant_samples(theta * pauli('Z'), 100)).residual;
    const double rf = check_averaging_bounds(fine, v, constant_samples(theta * pauli('Z'), 400)).residual;
    CHECK(rf <= 1e-6);
    CHECK(rf < rc / 3);
  }
  SECTION("dimension checks") {
    const Trajectory traj = random_trajectory(rng, 2, 4);
    CHECK_THROWS_AS(interaction_unitary(traj, constant_samples(CMatrix::Zero(2, 2), 3), 1.0), DimensionError);
    CHECK_THROWS_AS(check_averaging_bounds(traj, constant_samples(pauli('Z'), 4), 1.0, 0.5), DomainError);
  }
}

TEST_CASE("averaging bounds hold", "[evaluation][property]") {
  std::mt19937_64 rng(55);
  int violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 4 + trial % 30;
    const double horizon = 0.5 + 0.01 * trial;
    const double delta = 0.5 / horizon;
    const Trajectory traj = random_trajectory(rng, 2, m);
    const BoundCheck bc = check_averaging_bounds(traj, random_bounded_samples(rng, m, delta), horizon, delta);
    if (!bc.holds()) ++violations;
    CHECK(bc.ratio_avg() <= 1.0 + 1e-12);
  }
  CHECK(violations == 0);

  const ControlProblem p = fig1_problem();
  const BoundCheck fig1 = check_averaging_bounds(p, RVector::Constant(5, 2.0), constant_samples(0.05 * pauli('Z'), 50));
  CHECK(fig1.holds());
  CHECK(fig1.delta == Approx(0.05));
  CHECK(fig1.residual <= 1e-2);
}

TEST_CASE("filter function", "[evaluation]") {
  const int m = 200;
  const double horizon = 1.0;
  SECTION("zero spectrum") {
    std::mt19937_64 rng(56);
    const Trajectory traj = random_trajectory(rng, 2, m);
    CHECK(filter_function_measure(traj, {pauli('Z')}, horizon, [](double) { return 0.0; }) == 0.0);
  }
  SECTION("identity trajectory kernel matches the closed form") {
    const Trajectory traj = identity_trajectory(2, m);
    const std::vector<double> omegas{-40.0, -3.0, 0.0, 1e-7, 2.5, 60.0};
    const auto k = filter_function_kernel(traj, pauli('Z'), horizon, omegas);
    for (std::size_t i = 0; i < omegas.size(); ++i) {
      const cplx exact = 2.0 / std::numbers::pi * ramp_fourier_integral(omegas[i], horizon);
      CHECK(std::abs(k[i] - exact) <= 1e-3 * std::max(1.0, std::abs(exact)));
    }
  }
  SECTION("white noise agrees with Monte Carlo") {
    // piecewise-constant white noise of variance s^2 per grid step has a flat
    // two-sided spectrum s^2 h / (2 pi) inside the band
    const ControlProblem idle(CMatrix::Zero(2, 2), {}, linalg::identity(2), horizon, 1, m);
    const Trajectory traj = propagate_nominal(idle, RVector(0));
    const double s = 2.0, h = horizon / m;
    const double measure =
        filter_function_measure(traj, {pauli('Z')}, horizon, [&](double) { return s * s * h / (2 * std::numbers::pi); });
    std::mt19937_64 rng(57);
    std::normal_distribution<double> nd(0.0, s);
    double acc = 0.0;
    const int draws = 20000;
    for (int k = 0; k < draws; ++k) {
      double phase = 0.0;
      for (int t = 0; t < m; ++t) phase += nd(rng) * h;
      acc += 1.0 - std::pow(std::cos(phase), 2);
    }
    const double infid = acc / draws;
    CHECK(std::numbers::pi * measure == Approx(infid).epsilon(0.05));
  }
  SECTION("rejects time-dependent operators") {
    const Trajectory traj = identity_trajectory(2, 2);
    CHECK_THROWS(filter_function_measure(traj, {pauli('Z'), pauli('X')}, 1.0, [](double) { return 1.0; }));
  }
}
