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

// propagation.hpp: piecewise-constant nominal and perturbed unitary
// trajectories on the T/M averaging grid.

#pragma once

#include "robustpulse/linalg.hpp"

#include <limits>
#include <optional>
#include <utility>
#include <vector>

namespace robustpulse {

/// Box constraint applied to every pulse amplitude.
struct ControlBounds {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();
};

/// Drift + linear controls, target, horizon and discretization.
///
/// The control amplitudes are held constant over N pulses of width T/N;
/// propagation and averaging use the finer grid T/M, M a multiple of N. An
/// optional actuator impulse response (length M, on the T/M grid) filters the
/// upsampled commands before they reach the Hamiltonian.
class ControlProblem {
 public:
  ControlProblem(CMatrix drift, std::vector<CMatrix> controls, CMatrix target,
                 double horizon, int pulses, int avg_samples,
                 std::optional<ControlBounds> bounds = std::nullopt,
                 std::optional<RVector> actuator_response = std::nullopt)
      : drift_(std::move(drift)),
        controls_(std::move(controls)),
        target_(std::move(target)),
        horizon_(horizon),
        pulses_(pulses),
        samples_(avg_samples),
        bounds_(bounds),
        actuator_(std::move(actuator_response)) {
    linalg::require_hermitian(drift_, "drift Hamiltonian");
    const Eigen::Index n = drift_.rows();
    if (n < 1) throw DimensionError("system dimension must be positive");
    for (const auto& h : controls_) {
      if (h.rows() != n || h.cols() != n) throw DimensionError("control Hamiltonian dimension mismatch");
      linalg::require_hermitian(h, "control Hamiltonian");
    }
    if (target_.rows() != n || target_.cols() != n) throw DimensionError("target dimension mismatch");
    if (!linalg::is_unitary(target_)) throw DomainError("target is not unitary");
    if (!(horizon_ > 0.0) || !std::isfinite(horizon_)) throw DomainError("horizon T must be positive");
    if (pulses_ < 1 || samples_ < 1) throw DomainError("N and M must be positive");
    if (samples_ % pulses_ != 0) throw DomainError("M must be an integer multiple of N");
    if (bounds_ && !(bounds_->lower <= bounds_->upper)) throw DomainError("empty control bounds");
    if (actuator_ && actuator_->size() != samples_) {
      throw DimensionError("actuator impulse response must have length M");
    }
  }

  Eigen::Index dim() const { return drift_.rows(); }
  const CMatrix& drift() const { return drift_; }
  const std::vector<CMatrix>& controls() const { return controls_; }
  int num_controls() const { return static_cast<int>(controls_.size()); }
  const CMatrix& target() const { return target_; }
  double horizon() const { return horizon_; }
  int pulses() const { return pulses_; }
  int samples() const { return samples_; }
  double step() const { return horizon_ / samples_; }
  int substeps_per_pulse() const { return samples_ / pulses_; }
  const std::optional<ControlBounds>& bounds() const { return bounds_; }
  const std::optional<RVector>& actuator_response() const { return actuator_; }
  Eigen::Index num_variables() const { return Eigen::Index{num_controls()} * pulses_; }

  /// Pulse that owns grid step s (0-based); the 1-based rule is ceil(tN/M).
  int pulse_of_step(int s) const { return s / substeps_per_pulse(); }

  /// Flat index of amplitude v_{pulse, control}; each control's pulses are contiguous.
  Eigen::Index index(int pulse, int control) const { return Eigen::Index{control} * pulses_ + pulse; }

  ControlProblem with_target(CMatrix target) const {
    ControlProblem p = *this;
    p.target_ = std::move(target);
    if (!linalg::is_unitary(p.target_)) throw DomainError("target is not unitary");
    return p;
  }

  /// Same problem without the amplitude box (finite-difference probes may
  /// step slightly outside it).
  ControlProblem unbounded() const {
    ControlProblem p = *this;
    p.bounds_.reset();
    return p;
  }

 private:
  CMatrix drift_;
  std::vector<CMatrix> controls_;
  CMatrix target_;
  double horizon_;
  int pulses_;
  int samples_;
  std::optional<ControlBounds> bounds_;
  std::optional<RVector> actuator_;
};

/// Nominal unitaries U_0 = I, U_1, ..., U_M on the T/M grid.
struct Trajectory {
  std::vector<CMatrix> samples;

  int steps() const { return static_cast<int>(samples.size()) - 1; }
  const CMatrix& final() const { return samples.back(); }
  Eigen::Index dim() const { return samples.front().rows(); }
};

/// M Hermitian perturbation samples, one per grid step.
using PerturbationSamples = std::vector<CMatrix>;

inline void validate_controls(const ControlProblem& problem, const RVector& v) {
  if (v.size() != problem.num_variables()) {
    throw DimensionError("control vector has length " + std::to_string(v.size()) + ", expected " +
                         std::to_string(problem.num_variables()));
  }
  if (!v.allFinite()) throw DomainError("non-finite control amplitude");
  if (const auto& b = problem.bounds()) {
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      if (v(k) < b->lower - 1e-12 || v(k) > b->upper + 1e-12) {
        throw DomainError("control amplitude outside bounds at index " + std::to_string(k));
      }
    }
  }
}

inline RVector clip_to_bounds(const ControlProblem& problem, RVector v) {
  if (const auto& b = problem.bounds()) v = v.cwiseMax(b->lower).cwiseMin(b->upper);
  return v;
}

/// Effective control amplitudes on the T/M grid, M x m: pulses are held over
/// their sub-steps, then passed through the actuator response when present.
inline RMatrix grid_amplitudes(const ControlProblem& problem, const RVector& v) {
  const int m = problem.num_controls();
  const int steps = problem.samples();
  RMatrix u(steps, m);
  for (int j = 0; j < m; ++j)
    for (int s = 0; s < steps; ++s) u(s, j) = v(problem.index(problem.pulse_of_step(s), j));
  if (const auto& d = problem.actuator_response()) {
    u = linalg::lower_toeplitz(*d) * u;
  }
  return u;
}

inline CMatrix step_hamiltonian(const ControlProblem& problem, const RMatrix& amplitudes, int s) {
  CMatrix h = problem.drift();
  for (int j = 0; j < problem.num_controls(); ++j) h += amplitudes(s, j) * problem.controls()[j];
  return h;
}

/// U_t = exp(-i (T/M) H_t) U_{t-1}, U_0 = I.
inline Trajectory propagate_nominal(const ControlProblem& problem, const RVector& v) {
  validate_controls(problem, v);
  const RMatrix u = grid_amplitudes(problem, v);
  const double tau = problem.step();
  Trajectory traj;
  traj.samples.reserve(problem.samples() + 1);
  traj.samples.push_back(linalg::identity(problem.dim()));
  if (!problem.actuator_response()) {
    // pulses are exactly constant over their sub-steps: one eigensolve each
    const int r = problem.substeps_per_pulse();
    for (int p = 0; p < problem.pulses(); ++p) {
      const CMatrix e = linalg::expm_hermitian(step_hamiltonian(problem, u, p * r), tau);
      for (int k = 0; k < r; ++k) traj.samples.push_back(e * traj.samples.back());
    }
    return traj;
  }
  for (int s = 0; s < problem.samples(); ++s) {
    traj.samples.push_back(linalg::expm_hermitian(step_hamiltonian(problem, u, s), tau) *
                           traj.samples.back());
  }
  return traj;
}

/// |Tr(W^dag U)/n|^2
inline double gate_fidelity(const CMatrix& u, const CMatrix& target) {
  if (u.rows() != target.rows() || u.cols() != target.cols()) {
    throw DimensionError("fidelity: dimension mismatch");
  }
  const cplx z = (target.adjoint() * u).trace() / static_cast<double>(u.rows());
  return std::min(1.0, std::norm(z));
}

inline double nominal_fidelity(const Trajectory& traj, const CMatrix& target) {
  return gate_fidelity(traj.final(), target);
}

/// Final unitary of the system driven by H_t + Htilde_t on the T/M grid.
inline CMatrix propagate_perturbed(const ControlProblem& problem, const RVector& v,
                                   const PerturbationSamples& perturbation) {
  validate_controls(problem, v);
  if (static_cast<int>(perturbation.size()) != problem.samples()) {
    throw DimensionError("perturbation must have M samples");
  }
  for (const auto& h : perturbation) {
    if (h.rows() != problem.dim() || h.cols() != problem.dim()) {
      throw DimensionError("perturbation sample dimension mismatch");
    }
    linalg::require_hermitian(h, "perturbation sample");
  }
  const RMatrix u = grid_amplitudes(problem, v);
  CMatrix out = linalg::identity(problem.dim());
  for (int s = 0; s < problem.samples(); ++s) {
    out = linalg::expm_hermitian(step_hamiltonian(problem, u, s) + perturbation[s], problem.step()) * out;
  }
  return out;
}

inline double perturbed_fidelity(const ControlProblem& problem, const RVector& v,
                                 const PerturbationSamples& perturbation) {
  return gate_fidelity(propagate_perturbed(problem, v, perturbation), problem.target());
}

/// (1/M) sum_{t=1..M} U_t^dag B_t U_t
inline CMatrix time_averaged_hamiltonian(const Trajectory& traj, const std::vector<CMatrix>& ops) {
  const int m = traj.steps();
  if (static_cast<int>(ops.size()) != m) throw DimensionError("time average: need one operator per grid step");
  CMatrix g = CMatrix::Zero(traj.dim(), traj.dim());
  for (int t = 1; t <= m; ++t) {
    const CMatrix& u = traj.samples[t];
    g += u.adjoint() * ops[t - 1] * u;
  }
  g /= static_cast<double>(m);
  return 0.5 * (g + g.adjoint());
}

/// min_phi |U - phi W|_F^2 expressed through the fidelity: 2n(1 - sqrt F).
inline double infidelity_distance(double fidelity, Eigen::Index n) {
  if (!(fidelity >= 0.0 && fidelity <= 1.0)) throw DomainError("fidelity outside [0,1]");
  return 2.0 * static_cast<double>(n) * (1.0 - std::sqrt(fidelity));
}

}  // namespace robustpulse
