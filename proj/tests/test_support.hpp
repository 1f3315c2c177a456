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

// Random instances shared by the test suites.

#pragma once

#include "robustpulse/robustpulse.hpp"

#include <random>
#include <string>

namespace robustpulse::testing {

inline std::string source_path(const std::string& rel) { return std::string(ROBUSTPULSE_SOURCE_DIR) + "/" + rel; }

inline CMatrix random_complex(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> nd;
  CMatrix a(rows, cols);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = cplx(nd(rng), nd(rng));
  return a;
}

inline CMatrix random_hermitian(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  const CMatrix a = random_complex(rng, n, n);
  return scale * 0.5 * (a + a.adjoint());
}

inline CMatrix random_unitary(std::mt19937_64& rng, Eigen::Index n) {
  return linalg::expm_hermitian(random_hermitian(rng, n), 1.0);
}

inline RVector random_vector(std::mt19937_64& rng, Eigen::Index n, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  RVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

/// Trajectory of M + 1 unrelated random unitaries (U_0 = I).
inline Trajectory random_trajectory(std::mt19937_64& rng, Eigen::Index n, int steps) {
  Trajectory t;
  t.samples.push_back(linalg::identity(n));
  for (int s = 0; s < steps; ++s) t.samples.push_back(random_unitary(rng, n));
  return t;
}

inline Trajectory identity_trajectory(Eigen::Index n, int steps) {
  Trajectory t;
  t.samples.assign(steps + 1, linalg::identity(n));
  return t;
}

/// Random 1-qubit problem with m controls drawn from the Paulis.
inline ControlProblem random_qubit_problem(std::mt19937_64& rng, int controls, int pulses, int substeps,
                                           double horizon = 1.0) {
  std::vector<CMatrix> h;
  const char names[] = {'X', 'Y', 'Z'};
  for (int j = 0; j < controls; ++j) h.push_back(linalg::pauli(names[j % 3]));
  return ControlProblem(random_hermitian(rng, 2, 0.5), h, random_unitary(rng, 2), horizon, pulses, pulses * substeps);
}

/// The Fig. 1 system: drift sigma_z, one sigma_x control, identity target.
inline ControlProblem fig1_problem(int pulses = 5, int samples = 50) {
  return ControlProblem(linalg::pauli('Z'), {linalg::pauli('X')}, linalg::identity(2), 1.0, pulses, samples);
}

}  // namespace robustpulse::testing
