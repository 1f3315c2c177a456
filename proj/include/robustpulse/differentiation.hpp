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

// differentiation.hpp: gradients and Hessians of the nominal fidelity and the
// robustness functional with respect to the pulse amplitudes.

#pragma once

#include "robustpulse/parallel.hpp"
#include "robustpulse/uncertainty.hpp"

#include <cmath>
#include <vector>

namespace robustpulse {

/// value, gradient and Hessian of a scalar function of the controls.
struct QuadraticModel {
  double value = 0.0;
  RVector gradient;
  RMatrix hessian;

  /// value + g^T s + s^T H s / 2
  double predict(const RVector& step) const {
    return value + gradient.dot(step) + 0.5 * step.dot(hessian * step);
  }
};

struct FiniteDifferenceSteps {
  double gradient = 1e-5;
  double hessian = 1e-3;
  double fidelity_hessian = 1e-5;
};

namespace detail {

inline double probe_step(double relative, double x) { return relative * std::max(1.0, std::abs(x)); }

/// dz/du for z = Tr(W^dag U_M), per grid step s and control j (M x m).
inline CMatrix trace_sensitivities(const ControlProblem& problem, const Trajectory& traj, const RMatrix& amplitudes) {
  const int steps = problem.samples();
  const int m = problem.num_controls();
  const double tau = problem.step();
  const CMatrix wdag_u = problem.target().adjoint() * traj.final();
  CMatrix dz(steps, m);
  const bool shared = !problem.actuator_response();
  const int r = problem.substeps_per_pulse();
  std::optional<linalg::HermitianEigen> eig;
  CMatrix phi;
  std::vector<CMatrix> ctrl_eig(m);
  for (int s = 0; s < steps; ++s) {
    if (!shared || s % r == 0) {
      eig.emplace(step_hamiltonian(problem, amplitudes, s));
      phi = eig->frechet_kernel(tau);
      for (int j = 0; j < m; ++j) ctrl_eig[j] = eig->vectors.adjoint() * problem.controls()[j] * eig->vectors;
    }
    // Tr(W^dag U_M U_{s+1}^dag dE_s U_s) = Tr(X dE_s), X = U_s W^dag U_M U_{s+1}^dag
    const CMatrix x = traj.samples[s] * wdag_u * traj.samples[s + 1].adjoint();
    const CMatrix y = (eig->vectors.adjoint() * x * eig->vectors).transpose();
    const CMatrix yphi = y.cwiseProduct(phi);
    for (int j = 0; j < m; ++j) dz(s, j) = -kI * tau * yphi.cwiseProduct(ctrl_eig[j]).sum();
  }
  return dz;
}

}  // namespace detail

/// Exact gradient of |Tr(W^dag U_M)/n|^2 through the divided-difference form
/// of each step exponential's Frechet derivative.
inline RVector fidelity_gradient(const ControlProblem& problem, const RVector& v) {
  const Trajectory traj = propagate_nominal(problem, v);
  const RMatrix amp = grid_amplitudes(problem, v);
  RVector grad = RVector::Zero(problem.num_variables());
  if (grad.size() == 0) return grad;
  CMatrix dz = detail::trace_sensitivities(problem, traj, amp);
  if (const auto& d = problem.actuator_response()) {
    dz = linalg::lower_toeplitz(*d).transpose().cast<cplx>() * dz;
  }
  const double n = static_cast<double>(problem.dim());
  const cplx z = (problem.target().adjoint() * traj.final()).trace();
  for (int j = 0; j < problem.num_controls(); ++j) {
    for (int s = 0; s < problem.samples(); ++s) {
      grad(problem.index(problem.pulse_of_step(s), j)) += 2.0 * std::real(std::conj(z) * dz(s, j)) / (n * n);
    }
  }
  return grad;
}

/// Central differences of the analytic gradient, symmetrized. The raw
/// asymmetry |H - H^T|_inf is reported through `asymmetry` when requested.
inline RMatrix fidelity_hessian(const ControlProblem& problem, const RVector& v, unsigned threads = 1,
                                double relative_step = FiniteDifferenceSteps{}.fidelity_hessian,
                                double* asymmetry = nullptr) {
  validate_controls(problem, v);
  const ControlProblem probe = problem.unbounded();
  const Eigen::Index dim = v.size();
  RMatrix h(dim, dim);
  parallel_for(static_cast<std::size_t>(dim), threads, [&](std::size_t kk) {
    const auto k = static_cast<Eigen::Index>(kk);
    const double step = detail::probe_step(relative_step, v(k));
    if (!(v(k) + step != v(k))) throw DomainError("fidelity Hessian: step underflow");
    RVector vp = v, vm = v;
    vp(k) += step;
    vm(k) -= step;
    h.col(k) = (fidelity_gradient(probe, vp) - fidelity_gradient(probe, vm)) / (2.0 * step);
  });
  if (asymmetry) *asymmetry = dim == 0 ? 0.0 : (h - h.transpose()).cwiseAbs().rowwise().sum().maxCoeff();
  return 0.5 * (h + h.transpose());
}

inline QuadraticModel fidelity_model(const ControlProblem& problem, const RVector& v, unsigned threads = 1) {
  return {nominal_fidelity(propagate_nominal(problem, v), problem.target()), fidelity_gradient(problem, v),
          fidelity_hessian(problem, v, threads)};
}

namespace detail {

inline double checked_value(const RobustnessModel& model, const ControlProblem& problem, const RVector& v) {
  const double j = robustness_value(model, problem, v);
  if (!std::isfinite(j)) throw DomainError("robustness value is not finite at a probe point");
  return j;
}

}  // namespace detail

/// Central differences of J, step 1e-5 max(1, |v_k|).
inline RVector robustness_gradient(const RobustnessModel& model, const ControlProblem& problem, const RVector& v,
                                   unsigned threads = 1, double relative_step = FiniteDifferenceSteps{}.gradient) {
  validate_controls(problem, v);
  RVector g = RVector::Zero(v.size());
  if (model.empty()) return g;
  const ControlProblem probe = problem.unbounded();
  parallel_for(static_cast<std::size_t>(v.size()), threads, [&](std::size_t kk) {
    const auto k = static_cast<Eigen::Index>(kk);
    const double step = detail::probe_step(relative_step, v(k));
    RVector vp = v, vm = v;
    vp(k) += step;
    vm(k) -= step;
    g(k) = (detail::checked_value(model, probe, vp) - detail::checked_value(model, probe, vm)) / (2.0 * step);
  });
  return g;
}

/// Second differences of J, step 1e-3 max(1, |v_k|), symmetrized.
inline RMatrix robustness_hessian(const RobustnessModel& model, const ControlProblem& problem, const RVector& v,
                                  unsigned threads = 1, double relative_step = FiniteDifferenceSteps{}.hessian,
                                  std::optional<double> center = std::nullopt) {
  validate_controls(problem, v);
  const Eigen::Index dim = v.size();
  RMatrix h = RMatrix::Zero(dim, dim);
  if (model.empty() || dim == 0) return h;
  const ControlProblem probe = problem.unbounded();
  const double j0 = center ? *center : detail::checked_value(model, probe, v);
  RVector steps(dim);
  for (Eigen::Index k = 0; k < dim; ++k) steps(k) = detail::probe_step(relative_step, v(k));

  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  for (Eigen::Index k = 0; k < dim; ++k)
    for (Eigen::Index l = k; l < dim; ++l) pairs.emplace_back(k, l);
  parallel_for(pairs.size(), threads, [&](std::size_t p) {
    const auto [k, l] = pairs[p];
    auto at = [&](double sk, double sl) {
      RVector w = v;
      w(k) += sk * steps(k);
      w(l) += sl * steps(l);
      return detail::checked_value(model, probe, w);
    };
    if (k == l) {
      h(k, k) = (at(1.0, 0.0) - 2.0 * j0 + at(-1.0, 0.0)) / (steps(k) * steps(k));
    } else {
      h(k, l) = (at(1.0, 1.0) - at(1.0, -1.0) - at(-1.0, 1.0) + at(-1.0, -1.0)) / (4.0 * steps(k) * steps(l));
      h(l, k) = h(k, l);
    }
  });
  return 0.5 * (h + h.transpose());
}

inline QuadraticModel robustness_quadratic(const RobustnessModel& model, const ControlProblem& problem,
                                           const RVector& v, unsigned threads = 1) {
  const double j = robustness_value(model, problem, v);
  return {j, robustness_gradient(model, problem, v, threads), robustness_hessian(model, problem, v, threads, 1e-3, j)};
}

}  // namespace robustpulse
