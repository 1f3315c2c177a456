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

// open_systems.hpp: system-bath (bipartite) fidelity and averaging measure,
// and the vectorized Lindblad uncertainty measure.

#pragma once

#include "robustpulse/propagation.hpp"

#include <vector>

namespace robustpulse {

/// Nuclear-norm gate fidelity of a joint system-bath unitary against a
/// system-only target: V = (W_S (x) I_B)^dag U, Gamma = sum of the n_S diagonal
/// n_B x n_B blocks of V, F = |Gamma / n|_nuc^2 with n = n_S n_B.
inline double bipartite_fidelity(const CMatrix& u, const CMatrix& target_s, Eigen::Index n_s,
                                 Eigen::Index n_b) {
  const Eigen::Index n = n_s * n_b;
  if (target_s.rows() != n_s || target_s.cols() != n_s || u.rows() != n || u.cols() != n) {
    throw DimensionError("bipartite_fidelity: dimension mismatch");
  }
  const CMatrix v = linalg::kron(target_s, linalg::identity(n_b)).adjoint() * u;
  CMatrix gamma = CMatrix::Zero(n_b, n_b);
  for (Eigen::Index i = 0; i < n_s; ++i) gamma += v.block(i * n_b, i * n_b, n_b, n_b);
  Eigen::JacobiSVD<CMatrix> svd(gamma / static_cast<double>(n));
  const double nuc = svd.singularValues().sum();
  return std::min(1.0, nuc * nuc);
}

/// One sampled bath: its free trajectory U_B on the T/M grid and the M
/// coupling samples H_SB.
struct BathRealization {
  Trajectory bath;
  std::vector<CMatrix> coupling;
};

/// Free bath trajectory under a constant bath Hamiltonian.
inline Trajectory constant_hamiltonian_trajectory(const CMatrix& h, double horizon, int steps) {
  linalg::require_hermitian(h, "bath Hamiltonian");
  Trajectory traj;
  const CMatrix e = linalg::expm_hermitian(h, horizon / steps);
  traj.samples.push_back(linalg::identity(h.rows()));
  for (int s = 0; s < steps; ++s) traj.samples.push_back(e * traj.samples.back());
  return traj;
}

/// max over realizations of |(1/M) sum_t (U_S (x) U_B)^dag H_SB (U_S (x) U_B)|_2
inline double bipartite_avg_measure(const Trajectory& system,
                                    const std::vector<BathRealization>& realizations) {
  double worst = 0.0;
  const int m = system.steps();
  for (const auto& r : realizations) {
    if (r.bath.steps() != m || static_cast<int>(r.coupling.size()) != m) {
      throw DimensionError("bipartite_avg_measure: trajectory length mismatch");
    }
    const Eigen::Index n = system.dim() * r.bath.dim();
    CMatrix g = CMatrix::Zero(n, n);
    for (int t = 1; t <= m; ++t) {
      const CMatrix joint = linalg::kron(system.samples[t], r.bath.samples[t]);
      if (r.coupling[t - 1].rows() != n) throw DimensionError("bipartite_avg_measure: coupling dimension mismatch");
      g += joint.adjoint() * r.coupling[t - 1] * joint;
    }
    worst = std::max(worst, linalg::spectral_norm(g / static_cast<double>(m)));
  }
  return worst;
}

/// B_k = 2 (conj(L) (x) L) - (I (x) L^dag L + (L^dag L)^T (x) I), so that
/// B_k vec(rho) = vec(2 L rho L^dag - L^dag L rho - rho L^dag L).
inline std::vector<CMatrix> lindblad_lift(const std::vector<CMatrix>& jumps) {
  std::vector<CMatrix> lifted;
  lifted.reserve(jumps.size());
  for (const auto& l : jumps) {
    if (l.rows() != l.cols()) throw DimensionError("jump operator must be square");
    const Eigen::Index n = l.rows();
    const CMatrix ldl = l.adjoint() * l;
    const CMatrix id = linalg::identity(n);
    lifted.push_back(2.0 * linalg::kron(l.conjugate(), l) - linalg::kron(id, ldl) -
                     linalg::kron(ldl.transpose(), id));
  }
  return lifted;
}

inline constexpr Eigen::Index kMaxLiftedDim = 8;

/// Assembly of the lifted interaction averages Gamma_k = (T/M) sum_t
/// Vbar_t^dag B_k Vbar_t, Vbar = conj(U) (x) U; columns vec(Gamma_k).
inline CMatrix lindblad_assembly(const Trajectory& traj, const std::vector<CMatrix>& jumps, double horizon) {
  if (jumps.empty()) throw DimensionError("lindblad: need at least one jump operator");
  const Eigen::Index n = traj.dim();
  if (n > kMaxLiftedDim) throw DimensionError("lindblad: dimension too large for the n^4-row assembly");
  const auto lifted = lindblad_lift(jumps);
  const int m = traj.steps();
  std::vector<CMatrix> gammas(lifted.size(), CMatrix::Zero(n * n, n * n));
  for (int t = 1; t <= m; ++t) {
    const CMatrix vbar = linalg::kron(traj.samples[t].conjugate(), traj.samples[t]);
    for (std::size_t k = 0; k < lifted.size(); ++k) {
      if (lifted[k].rows() != n * n) throw DimensionError("lindblad: jump operator dimension mismatch");
      gammas[k] += vbar.adjoint() * lifted[k] * vbar;
    }
  }
  CMatrix a(n * n * n * n, static_cast<Eigen::Index>(lifted.size()));
  for (std::size_t k = 0; k < lifted.size(); ++k) {
    a.col(static_cast<Eigen::Index>(k)) = linalg::vec(gammas[k] * (horizon / m));
  }
  return a;
}

/// delta |A| for the lifted Lindblad assembly; spectral norm by default.
inline double lindblad_measure(const Trajectory& traj, const std::vector<CMatrix>& jumps, double delta,
                               double horizon, linalg::NormKind norm = linalg::NormKind::two) {
  if (delta < 0.0) throw DomainError("lindblad: delta must be nonnegative");
  return delta * linalg::matrix_norm(lindblad_assembly(traj, jumps, horizon), norm);
}

/// |Tr((conj(W) (x) W)^dag (conj(U) (x) U) R) / n^2|, unsquared.
inline double lifted_fidelity(const CMatrix& u_final, const CMatrix& r, const CMatrix& target) {
  const Eigen::Index n = target.rows();
  if (u_final.rows() != n || r.rows() != n * n || r.cols() != n * n) {
    throw DimensionError("lifted_fidelity: dimension mismatch");
  }
  const CMatrix wl = linalg::kron(target.conjugate(), target);
  const CMatrix vl = linalg::kron(u_final.conjugate(), u_final);
  return std::abs((wl.adjoint() * vl * r).trace()) / static_cast<double>(n * n);
}

/// Lifted propagator of d/dt vec(rho) = (-i A_t + sum_k theta_k B_k) vec(rho)
/// as a product of step exponentials. Validation integrator only.
inline CMatrix lindblad_propagator(const ControlProblem& problem, const RVector& v,
                                   const std::vector<CMatrix>& jumps, const RVector& rates) {
  if (rates.size() != static_cast<Eigen::Index>(jumps.size())) {
    throw DimensionError("lindblad_propagator: one rate per jump operator");
  }
  validate_controls(problem, v);
  const Eigen::Index n = problem.dim();
  const auto lifted = lindblad_lift(jumps);
  CMatrix dissipator = CMatrix::Zero(n * n, n * n);
  for (std::size_t k = 0; k < lifted.size(); ++k) dissipator += rates(static_cast<Eigen::Index>(k)) * lifted[k];
  const RMatrix u = grid_amplitudes(problem, v);
  const CMatrix id = linalg::identity(n);
  CMatrix phi = linalg::identity(n * n);
  for (int s = 0; s < problem.samples(); ++s) {
    const CMatrix h = step_hamiltonian(problem, u, s);
    const CMatrix gen = -kI * (linalg::kron(id, h) - linalg::kron(h.transpose(), id)) + dissipator;
    phi = linalg::expm_general(gen * problem.step()) * phi;
  }
  return phi;
}

/// Lifted fidelity of the dissipative evolution, |Tr((conj W (x) W)^dag Phi)| / n^2.
inline double lindblad_fidelity(const ControlProblem& problem, const RVector& v,
                                const std::vector<CMatrix>& jumps, const RVector& rates) {
  const CMatrix phi = lindblad_propagator(problem, v, jumps, rates);
  const Eigen::Index n = problem.dim();
  const CMatrix wl = linalg::kron(problem.target().conjugate(), problem.target());
  return std::abs((wl.adjoint() * phi).trace()) / static_cast<double>(n * n);
}

}  // namespace robustpulse
