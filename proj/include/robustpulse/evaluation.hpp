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

// evaluation.hpp: Monte-Carlo fidelity sweeps, interaction-picture bound
// checks and the frequency-domain filter-function measure.

#pragma once

#include "robustpulse/parallel.hpp"
#include "robustpulse/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

namespace robustpulse {

struct SweepRow {
  double magnitude = 0.0;
  int n_samples = 0;
  double fid_mean = 0.0;
  double fid_min = 0.0;
  double fid_max = 0.0;
  std::string label;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::vector<std::string> warnings;

  void append(const SweepReport& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    warnings.insert(warnings.end(), other.warnings.begin(), other.warnings.end());
  }
};

/// Shortest round-trip representation with 17 significant digits.
inline std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline void write_sweep_csv(std::ostream& os, const SweepReport& report) {
  os << "magnitude,n_samples,fid_mean,fid_min,fid_max,label\n";
  for (const auto& r : report.rows) {
    os << format_real(r.magnitude) << ',' << r.n_samples << ',' << format_real(r.fid_mean) << ','
       << format_real(r.fid_min) << ',' << format_real(r.fid_max) << ',' << r.label << '\n';
  }
}

/// Seed of sample k at grid point i, independent of thread scheduling.
inline std::uint64_t sample_seed(std::uint64_t seed, std::size_t point, std::size_t sample) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(point), static_cast<std::uint32_t>(sample)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t{words[0]} << 32) | words[1];
}

struct SweepOptions {
  int samples_per_point = 100;
  std::uint64_t seed = 0;
  SamplingMode mode = SamplingMode::random;
  unsigned threads = 1;
  std::string label;
};

/// For each magnitude (sorted ascending), draws realizations from the specs
/// (jointly, see sample_joint_perturbation) and records fidelity statistics
/// of the perturbed evolution.
inline SweepReport monte_carlo_sweep(const ControlProblem& problem, const RVector& v,
                                     const std::vector<UncertaintySpec>& specs, std::vector<double> magnitudes,
                                     const SweepOptions& options) {
  if (options.samples_per_point < 1) throw DomainError("sweep: need at least one sample per point");
  validate_controls(problem, v);
  std::sort(magnitudes.begin(), magnitudes.end());
  SweepReport report;
  const double nominal = nominal_delta(specs);
  for (double m : magnitudes) {
    if (std::abs(m) > nominal * (1.0 + 1e-12)) {
      report.warnings.push_back("sweep magnitude " + format_real(m) + " exceeds the modeled bound " +
                                format_real(nominal));
      break;
    }
  }
  const std::size_t per = static_cast<std::size_t>(options.samples_per_point);
  std::vector<double> fids(magnitudes.size() * per);
  parallel_for(fids.size(), options.threads, [&](std::size_t idx) {
    const std::size_t i = idx / per, k = idx % per;
    std::mt19937_64 rng(sample_seed(options.seed, i, k));
    const PerturbationSamples h = sample_joint_perturbation(specs, problem, v, magnitudes[i], rng, options.mode);
    fids[idx] = perturbed_fidelity(problem, v, h);
  });
  for (std::size_t i = 0; i < magnitudes.size(); ++i) {
    SweepRow row{magnitudes[i], options.samples_per_point, 0.0, 1.0, 0.0, options.label};
    double acc = 0.0;
    for (std::size_t k = 0; k < per; ++k) {
      const double f = fids[i * per + k];
      acc += f;
      row.fid_min = std::min(row.fid_min, f);
      row.fid_max = std::max(row.fid_max, f);
    }
    row.fid_mean = std::clamp(acc / static_cast<double>(per), row.fid_min, row.fid_max);
    report.rows.push_back(row);
  }
  return report;
}

inline SweepReport monte_carlo_sweep(const ControlProblem& problem, const RVector& v, const UncertaintySpec& spec,
                                     std::vector<double> magnitudes, const SweepOptions& options) {
  return monte_carlo_sweep(problem, v, std::vector<UncertaintySpec>{spec}, std::move(magnitudes), options);
}

// ---------------------------------------------------------------------------
// Interaction picture

struct InteractionResult {
  std::vector<CMatrix> r;  // R_0 = I, ..., R_M
  CMatrix r_bar;           // exp(-i T G_avg)
  std::vector<CMatrix> g;  // G_t = U_t^dag Htilde_t U_t, t = 1..M
  CMatrix g_avg;
};

/// R_t = exp(-i (T/M) G_t) R_{t-1} with G_t conjugated by the nominal U_t.
inline InteractionResult interaction_unitary(const Trajectory& traj, const PerturbationSamples& h, double horizon) {
  const int m = traj.steps();
  if (static_cast<int>(h.size()) != m) throw DimensionError("interaction: need one perturbation per grid step");
  const Eigen::Index n = traj.dim();
  const double tau = horizon / m;
  InteractionResult out;
  out.r.push_back(linalg::identity(n));
  out.g_avg = CMatrix::Zero(n, n);
  for (int t = 1; t <= m; ++t) {
    if (h[t - 1].rows() != n) throw DimensionError("interaction: perturbation dimension mismatch");
    CMatrix g = traj.samples[t].adjoint() * h[t - 1] * traj.samples[t];
    g = 0.5 * (g + g.adjoint());
    out.r.push_back(linalg::expm_hermitian(g, tau) * out.r.back());
    out.g_avg += g;
    out.g.push_back(std::move(g));
  }
  out.g_avg /= static_cast<double>(m);
  out.r_bar = linalg::expm_hermitian(out.g_avg, horizon);
  return out;
}

struct BoundCheck {
  double gamma_bar = 0.0;
  double gamma_tilde = 0.0;
  double delta = 0.0;
  double horizon = 0.0;
  double measured_avg = 0.0;  // |Rbar(T) - I|
  double measured_dev = 0.0;  // |R(T) - Rbar(T)|
  double bound_avg = 0.0;     // exp(gamma_bar delta T) - 1
  double bound_dev = 0.0;     // exp(gamma_tilde (delta T)^2) - 1
  double residual = 0.0;      // |U_M - Ubar_M R_M|_F, when the perturbed evolution is supplied

  bool holds(double tol = 1e-12) const {
    return measured_avg <= bound_avg + tol && measured_dev <= bound_dev + tol;
  }
  double ratio_avg() const { return bound_avg > 0.0 ? measured_avg / bound_avg : 0.0; }
  double ratio_dev() const { return bound_dev > 0.0 ? measured_dev / bound_dev : 0.0; }
};

/// Evaluates both averaging inequalities in the spectral norm with
/// A_t = G_t / delta; delta defaults to max_t |Htilde_t|_2.
inline BoundCheck check_averaging_bounds(const Trajectory& traj, const PerturbationSamples& h, double horizon,
                                         std::optional<double> delta = std::nullopt) {
  const InteractionResult ir = interaction_unitary(traj, h, horizon);
  double peak = 0.0;
  for (const auto& x : h) peak = std::max(peak, linalg::spectral_norm(x));
  BoundCheck bc;
  bc.horizon = horizon;
  bc.delta = delta ? *delta : peak;
  if (bc.delta < peak * (1.0 - 1e-12)) throw DomainError("bound check: delta below the perturbation peak norm");
  const Eigen::Index n = traj.dim();
  if (bc.delta > 0.0) {
    bc.gamma_bar = linalg::spectral_norm(ir.g_avg) / bc.delta;
    for (const auto& g : ir.g) bc.gamma_tilde = std::max(bc.gamma_tilde, linalg::spectral_norm(g - ir.g_avg) / bc.delta);
  }
  bc.measured_avg = linalg::spectral_norm(ir.r_bar - linalg::identity(n));
  bc.measured_dev = linalg::spectral_norm(ir.r.back() - ir.r_bar);
  const double dt = bc.delta * horizon;
  bc.bound_avg = std::expm1(bc.gamma_bar * dt);
  bc.bound_dev = std::expm1(bc.gamma_tilde * dt * dt);
  return bc;
}

/// Same check, also reporting the consistency residual against the fully
/// perturbed propagation of the problem.
inline BoundCheck check_averaging_bounds(const ControlProblem& problem, const RVector& v, const PerturbationSamples& h,
                                         std::optional<double> delta = std::nullopt) {
  const Trajectory traj = propagate_nominal(problem, v);
  BoundCheck bc = check_averaging_bounds(traj, h, problem.horizon(), delta);
  const InteractionResult ir = interaction_unitary(traj, h, problem.horizon());
  bc.residual = (propagate_perturbed(problem, v, h) - traj.final() * ir.r.back()).norm();
  return bc;
}

// ---------------------------------------------------------------------------
// Filter function

using Spectrum = std::function<double(double)>;

/// Default frequency grid: 512 points across the band |omega| <= pi/(T/M).
inline std::vector<double> default_omega_grid(double horizon, int samples, int points = 512) {
  if (points < 2) throw DomainError("omega grid needs at least two points");
  const double top = std::numbers::pi / (horizon / samples);
  std::vector<double> w(points);
  for (int k = 0; k < points; ++k) w[k] = -top + 2.0 * top * k / (points - 1);
  return w;
}

/// A(omega) = (1/pi) int_0^T (T - tau) e^{i omega tau} c(tau) dtau with
/// c(tau) = Tr(U(tau)^dag B U(tau) B), trapezoid rule on the T/M grid.
inline std::vector<cplx> filter_function_kernel(const Trajectory& traj, const CMatrix& b, double horizon,
                                                const std::vector<double>& omegas) {
  const int m = traj.steps();
  if (b.rows() != traj.dim() || b.cols() != traj.dim()) throw DimensionError("filter function: operator dimension");
  linalg::require_hermitian(b, "filter-function operator");
  const double h = horizon / m;
  std::vector<cplx> c(m + 1);
  for (int k = 0; k <= m; ++k) c[k] = (traj.samples[k].adjoint() * b * traj.samples[k] * b).trace();
  std::vector<cplx> out(omegas.size());
  for (std::size_t i = 0; i < omegas.size(); ++i) {
    cplx acc = 0.0;
    for (int k = 0; k <= m; ++k) {
      const double tau = k * h;
      const double w = (k == 0 || k == m) ? 0.5 : 1.0;
      acc += w * (horizon - tau) * std::exp(kI * omegas[i] * tau) * c[k];
    }
    out[i] = acc * h / std::numbers::pi;
  }
  return out;
}

/// Re int A(omega) S(omega) domega by the trapezoid rule on the grid. Only
/// a single constant operator is accepted.
inline double filter_function_measure(const Trajectory& traj, const OperatorSequence& b, double horizon,
                                      const Spectrum& spectrum, std::vector<double> omegas = {}) {
  if (b.size() != 1) {
    bool constant = !b.empty();
    for (std::size_t k = 1; k < b.size() && constant; ++k) constant = (b[k] - b[0]).norm() == 0.0;
    if (!constant) throw DomainError("filter function: only a constant operator is supported");
  }
  if (omegas.empty()) omegas = default_omega_grid(horizon, traj.steps());
  if (!std::is_sorted(omegas.begin(), omegas.end())) throw DomainError("filter function: omega grid must be sorted");
  const auto kernel = filter_function_kernel(traj, b.front(), horizon, omegas);
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < omegas.size(); ++i) {
    const double dw = omegas[i + 1] - omegas[i];
    acc += 0.5 * dw * (std::real(kernel[i]) * spectrum(omegas[i]) + std::real(kernel[i + 1]) * spectrum(omegas[i + 1]));
  }
  return acc;
}

/// int_0^T (T - tau) e^{i omega tau} dtau in closed form.
inline cplx ramp_fourier_integral(double omega, double horizon) {
  if (std::abs(omega * horizon) < 1e-6) return cplx(horizon * horizon / 2.0, omega * horizon * horizon * horizon / 6.0);
  return (1.0 + kI * omega * horizon - std::exp(kI * omega * horizon)) / (omega * omega);
}

}  // namespace robustpulse
