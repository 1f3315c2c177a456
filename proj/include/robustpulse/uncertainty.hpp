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

// uncertainty.hpp: robustness assemblies J = delta |A S|_mu for each modeled
// uncertainty set, the combined robustness functional, and a seeded sampler
// of concrete perturbation realizations.

#pragma once

#include "robustpulse/open_systems.hpp"
#include "robustpulse/propagation.hpp"

#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace robustpulse {

using linalg::NormKind;

/// One (A, S, mu, delta) quadruple. A is n^2 x K with vec'd averaged
/// conjugated operators as columns, S is K x P.
struct RobustnessAssembly {
  CMatrix A;
  CMatrix S;
  NormKind mu = NormKind::two;
  double delta = 1.0;

  CMatrix shaped() const { return A * S; }
};

/// delta |A S|_mu. With a temperature, the max-row-sum norm is replaced by a
/// log-sum-exp over the row sums (a smooth upper bound).
inline double measure(const RobustnessAssembly& a, std::optional<double> lse_temperature = std::nullopt) {
  if (a.A.cols() != a.S.rows()) throw DimensionError("assembly: A columns must equal S rows");
  if (a.delta < 0.0) throw DomainError("assembly: delta must be nonnegative");
  if (a.delta == 0.0) return 0.0;
  const CMatrix as = a.shaped();
  if (a.mu == NormKind::inf && lse_temperature && *lse_temperature > 0.0 && as.size() > 0) {
    const double tau = *lse_temperature;
    const RVector rows = as.cwiseAbs().rowwise().sum();
    const double top = rows.maxCoeff();
    double acc = 0.0;
    for (Eigen::Index i = 0; i < rows.size(); ++i) acc += std::exp((rows(i) - top) / tau);
    return a.delta * (top + tau * std::log(acc));
  }
  return a.delta * linalg::matrix_norm(as, a.mu);
}

/// Causal M x M noise filter theta = K w. Toeplitz when the filter is LTI.
class NoiseFilter {
 public:
  explicit NoiseFilter(RMatrix k) : k_(std::move(k)) {
    if (k_.rows() != k_.cols()) throw DimensionError("noise filter must be square");
    if (!k_.allFinite()) throw DomainError("noise filter has non-finite entries");
    for (Eigen::Index i = 0; i < k_.rows(); ++i)
      for (Eigen::Index j = i + 1; j < k_.cols(); ++j)
        if (k_(i, j) != 0.0) throw DomainError("noise filter must be lower-triangular (causal)");
    toeplitz_ = true;
    for (Eigen::Index i = 1; i < k_.rows() && toeplitz_; ++i)
      for (Eigen::Index j = 1; j <= i; ++j)
        if (k_(i, j) != k_(i - 1, j - 1)) { toeplitz_ = false; break; }
  }

  const RMatrix& matrix() const { return k_; }
  bool is_toeplitz() const { return toeplitz_; }
  Eigen::Index size() const { return k_.rows(); }

 private:
  RMatrix k_;
  bool toeplitz_ = false;
};

inline NoiseFilter toeplitz_from_impulse(const RVector& impulse) {
  return NoiseFilter(linalg::lower_toeplitz(impulse));
}

/// Zero-order-hold discretization of 1/(beta s + 1) at step T/M:
/// first column (1-a)[1, a, a^2, ...], a = exp(-(T/M)/beta).
inline NoiseFilter first_order_filter(double beta, double horizon, int samples) {
  if (!(beta > 0.0)) throw DomainError("first-order filter: time constant must be positive");
  if (samples < 1) throw DomainError("first-order filter: M must be positive");
  const double a = std::exp(-(horizon / samples) / beta);
  RVector h(samples);
  double p = 1.0;
  for (int k = 0; k < samples; ++k, p *= a) h(k) = (1.0 - a) * p;
  return toeplitz_from_impulse(h);
}

/// |Theta(omega)| of the first-order filter (1-a)/(1 - a e^{-i omega dt}).
inline double first_order_gain(double a, double omega, double dt) {
  return (1.0 - a) / std::sqrt(1.0 - 2.0 * a * std::cos(omega * dt) + a * a);
}

/// M x L block matrix of ones vectors, one block per interval.
inline RMatrix interval_blocks(int samples, int intervals) {
  if (intervals < 1 || samples % intervals != 0) {
    throw DomainError("interval count L must divide M");
  }
  const int width = samples / intervals;
  RMatrix s = RMatrix::Zero(samples, intervals);
  for (int l = 0; l < intervals; ++l) s.block(l * width, l, width, 1).setOnes();
  return s;
}

/// Either one constant operator or one operator per grid step.
using OperatorSequence = std::vector<CMatrix>;

namespace detail {

inline const CMatrix& op_at(const OperatorSequence& seq, int t) {
  return seq.size() == 1 ? seq.front() : seq[static_cast<std::size_t>(t)];
}

inline void check_sequence(const OperatorSequence& seq, const Trajectory& traj, std::string_view what) {
  if (seq.size() != 1 && static_cast<int>(seq.size()) != traj.steps()) {
    throw DimensionError(std::string(what) + ": operator sequence must have 1 or M entries");
  }
  for (const auto& b : seq) {
    if (b.rows() != traj.dim() || b.cols() != traj.dim()) {
      throw DimensionError(std::string(what) + ": operator dimension mismatch");
    }
  }
}

/// Columns weight_t vec(U_t^dag B_t U_t) / M, t = 1..M.
inline CMatrix conjugated_columns(const Trajectory& traj, const OperatorSequence& seq,
                                  const RVector* weights = nullptr) {
  const int m = traj.steps();
  const Eigen::Index n = traj.dim();
  CMatrix a(n * n, m);
  for (int t = 1; t <= m; ++t) {
    const CMatrix& u = traj.samples[t];
    const double w = weights ? (*weights)(t - 1) : 1.0;
    a.col(t - 1) = linalg::vec(u.adjoint() * op_at(seq, t - 1) * u) * (w / m);
  }
  return a;
}

inline CVector averaged_column(const Trajectory& traj, const OperatorSequence& seq) {
  return conjugated_columns(traj, seq).rowwise().sum();
}

inline CMatrix to_complex(const RMatrix& r) { return r.cast<cplx>(); }

}  // namespace detail

enum class NormalizationPolicy { ignore, warn, error };

/// Checks the |B| <= 1 (spectral) normalization of perturbation operators.
inline bool check_normalization(const OperatorSequence& seq, NormalizationPolicy policy, std::string_view what) {
  if (policy == NormalizationPolicy::ignore) return true;
  for (const auto& b : seq) {
    if (linalg::spectral_norm(b) > 1.0 + 1e-12) {
      const std::string msg = std::string(what) + ": operator has spectral norm above 1";
      if (policy == NormalizationPolicy::error) throw DomainError(msg);
      std::clog << "warning: " << msg << "\n";
      return false;
    }
  }
  return true;
}

enum class ParamBound { peak, energy, covariance };

inline const char* to_string(ParamBound b) {
  switch (b) {
    case ParamBound::peak: return "peak";
    case ParamBound::energy: return "energy";
    case ParamBound::covariance: return "covariance";
  }
  return "?";
}

/// Constant uncertain parameters: Htilde_t = sum_l theta_l B_{l t}.
/// Peak and energy bounds give S = I with mu = inf / two; a covariance
/// delta^2 C gives S = sqrt(C), mu = fro_sq and stored delta = delta^2.
inline RobustnessAssembly assemble_constant_param(const Trajectory& traj, const std::vector<OperatorSequence>& ops,
                                                  ParamBound bound, double delta,
                                                  const RMatrix& covariance = RMatrix(),
                                                  NormalizationPolicy policy = NormalizationPolicy::ignore) {
  if (ops.empty()) throw DimensionError("constant_param: need at least one operator");
  if (delta < 0.0) throw DomainError("constant_param: delta must be nonnegative");
  const Eigen::Index n = traj.dim();
  CMatrix a(n * n, static_cast<Eigen::Index>(ops.size()));
  for (std::size_t l = 0; l < ops.size(); ++l) {
    detail::check_sequence(ops[l], traj, "constant_param");
    check_normalization(ops[l], policy, "constant_param");
    a.col(static_cast<Eigen::Index>(l)) = detail::averaged_column(traj, ops[l]);
  }
  const Eigen::Index count = a.cols();
  switch (bound) {
    case ParamBound::peak:
      return {a, CMatrix::Identity(count, count), NormKind::inf, delta};
    case ParamBound::energy:
      return {a, CMatrix::Identity(count, count), NormKind::two, delta};
    case ParamBound::covariance:
      if (covariance.rows() != count || covariance.cols() != count) {
        throw DimensionError("constant_param: covariance must be L x L");
      }
      return {a, detail::to_complex(linalg::psd_sqrt(covariance)), NormKind::fro_sq, delta * delta};
  }
  throw DomainError("constant_param: unknown bound kind");
}

/// Constant energy-bounded Hamiltonian, |Htilde|_F <= delta, expanded in an
/// orthonormal Hermitian basis.
inline RobustnessAssembly assemble_energy_bounded(const Trajectory& traj, const std::vector<CMatrix>& basis,
                                                  double delta) {
  const Eigen::Index n = traj.dim();
  if (static_cast<Eigen::Index>(basis.size()) != n * n) {
    throw DimensionError("energy_bounded: basis must have n^2 elements");
  }
  CMatrix stacked(n * n, n * n);
  for (std::size_t i = 0; i < basis.size(); ++i) {
    if (basis[i].rows() != n || basis[i].cols() != n) throw DimensionError("energy_bounded: basis dimension mismatch");
    if (!linalg::is_hermitian(basis[i], 1e-10)) throw DomainError("energy_bounded: basis element not Hermitian");
    stacked.col(static_cast<Eigen::Index>(i)) = linalg::vec(basis[i]);
  }
  if (!linalg::is_unitary(stacked, 1e-10)) throw DomainError("energy_bounded: basis is not orthonormal");
  if (delta < 0.0) throw DomainError("energy_bounded: delta must be nonnegative");
  CMatrix a(n * n, n * n);
  for (std::size_t i = 0; i < basis.size(); ++i) {
    a.col(static_cast<Eigen::Index>(i)) = detail::averaged_column(traj, OperatorSequence{basis[i]});
  }
  return {a, CMatrix::Identity(n * n, n * n), NormKind::two, delta};
}

/// Linear drift weights h_t = [M - t, t - 1] / (M - 1), t = 1..M.
inline RMatrix drift_weights(int samples) {
  if (samples < 2) throw DomainError("bias_drift: need M >= 2");
  RMatrix h(samples, 2);
  for (int t = 1; t <= samples; ++t) {
    h(t - 1, 0) = static_cast<double>(samples - t) / (samples - 1);
    h(t - 1, 1) = static_cast<double>(t - 1) / (samples - 1);
  }
  return h;
}

/// Per-run linear drift theta_{l,t} = h_t^T [a_l; b_l]; one n^2 x 2 assembly
/// per parameter (with the 1/M averaging factor).
inline std::vector<RobustnessAssembly> assemble_bias_drift(const Trajectory& traj,
                                                           const std::vector<OperatorSequence>& ops,
                                                           const std::vector<double>& deltas,
                                                           NormKind norm = NormKind::two) {
  if (ops.size() != deltas.size()) throw DimensionError("bias_drift: one bound per parameter");
  const RMatrix h = drift_weights(traj.steps());
  std::vector<RobustnessAssembly> out;
  for (std::size_t l = 0; l < ops.size(); ++l) {
    detail::check_sequence(ops[l], traj, "bias_drift");
    if (deltas[l] < 0.0) throw DomainError("bias_drift: bounds must be nonnegative");
    const CMatrix cols = detail::conjugated_columns(traj, ops[l]);
    out.push_back({cols * detail::to_complex(h), CMatrix::Identity(2, 2), norm, deltas[l]});
  }
  return out;
}

/// Filtered stationary noise theta = delta K w / |K|_F with cov w = I.
/// Optional per-sample weights scale the columns (control amplitudes for
/// multiplicative control noise).
inline RobustnessAssembly assemble_time_varying(const Trajectory& traj, const OperatorSequence& op,
                                                const NoiseFilter& filter, double delta,
                                                const std::optional<RVector>& weights = std::nullopt) {
  detail::check_sequence(op, traj, "time_varying");
  if (filter.size() != traj.steps()) throw DimensionError("time_varying: filter must be M x M");
  if (weights && weights->size() != traj.steps()) throw DimensionError("time_varying: need M weights");
  if (delta < 0.0) throw DomainError("time_varying: delta must be nonnegative");
  const double kf = filter.matrix().norm();
  CMatrix a = detail::conjugated_columns(traj, op, weights ? &*weights : nullptr);
  CMatrix s = kf > 0.0 ? detail::to_complex(filter.matrix() / kf) : CMatrix::Zero(filter.size(), filter.size());
  return {std::move(a), std::move(s), NormKind::fro, delta};
}

enum class PwcKind { deterministic_inf, probabilistic };

inline const char* to_string(PwcKind k) {
  return k == PwcKind::deterministic_inf ? "deterministic_inf" : "probabilistic";
}

/// Piecewise-constant noise: theta constant on each of L uniform intervals.
inline RobustnessAssembly assemble_pwc_noise(const Trajectory& traj, const OperatorSequence& op, int intervals,
                                             double delta, PwcKind kind,
                                             const std::optional<RVector>& weights = std::nullopt) {
  detail::check_sequence(op, traj, "pwc_noise");
  if (weights && weights->size() != traj.steps()) throw DimensionError("pwc_noise: need M weights");
  if (delta < 0.0) throw DomainError("pwc_noise: delta must be nonnegative");
  const RMatrix s = interval_blocks(traj.steps(), intervals);
  return {detail::conjugated_columns(traj, op, weights ? &*weights : nullptr), detail::to_complex(s),
          kind == PwcKind::deterministic_inf ? NormKind::inf : NormKind::fro, delta};
}

/// Truncated convolution of two length-M impulse responses.
inline RVector convolve_truncated(const RVector& a, const RVector& b) {
  RVector c = RVector::Zero(a.size());
  for (Eigen::Index i = 0; i < a.size(); ++i)
    for (Eigen::Index j = 0; j <= i && j < b.size(); ++j) c(i) += a(j) * b(i - j);
  return c;
}

/// Multiplicative actuator model error D = (1 + Delta Q) Dbar with
/// |Delta|_Hinf <= delta. Per control j: A_j columns vec(U_t^dag H_j U_t)/M
/// and the scalar |T(Q Dbar) vbar_j|_2 folded into delta.
inline std::vector<RobustnessAssembly> assemble_actuator(const Trajectory& traj, const std::vector<CMatrix>& controls,
                                                         const RMatrix& commands, const RVector& nominal_response,
                                                         const RVector& weight_response, double delta) {
  const int m = traj.steps();
  if (nominal_response.size() != m || weight_response.size() != m) {
    throw DimensionError("actuator: impulse responses must have length M");
  }
  if (commands.rows() != m || commands.cols() != static_cast<Eigen::Index>(controls.size())) {
    throw DimensionError("actuator: commands must be M x m");
  }
  if (delta < 0.0) throw DomainError("actuator: delta must be nonnegative");
  const RMatrix k = linalg::lower_toeplitz(convolve_truncated(weight_response, nominal_response));
  std::vector<RobustnessAssembly> out;
  for (std::size_t j = 0; j < controls.size(); ++j) {
    const double sj = (k * commands.col(static_cast<Eigen::Index>(j))).norm();
    out.push_back({detail::conjugated_columns(traj, OperatorSequence{controls[j]}), CMatrix::Identity(m, m),
                   NormKind::two, delta * sj});
  }
  return out;
}

/// How several measures are merged into one value.
enum class Combine { sum, max, stack };

inline const char* to_string(Combine c) {
  switch (c) {
    case Combine::sum: return "sum";
    case Combine::max: return "max";
    case Combine::stack: return "stack";
  }
  return "?";
}

inline Combine combine_from_string(std::string_view s) {
  if (s == "sum") return Combine::sum;
  if (s == "max") return Combine::max;
  if (s == "stack") return Combine::stack;
  throw DomainError("unknown combiner \"" + std::string(s) + "\"");
}

/// Two parallel channels with local and cross-coupling perturbations.
struct CrossCouplingAssembly {
  RobustnessAssembly local1;
  RobustnessAssembly local2;
  RobustnessAssembly interaction;
  Combine combine = Combine::max;

  double value(std::optional<double> lse = std::nullopt) const {
    const double a = measure(local1, lse), b = measure(local2, lse), c = measure(interaction, lse);
    return combine == Combine::max ? std::max({a, b, c}) : a + b + c;
  }
};

namespace detail {

inline CrossCouplingAssembly cross_from_averages(const CVector& g1, const CVector& g2, const CVector& gint,
                                                 double d1, double d2, double dint, NormKind norm, Combine combine) {
  if (combine == Combine::stack) throw DomainError("cross_coupling: combiner must be max or sum");
  return {{g1, CMatrix::Identity(1, 1), norm, d1},
          {g2, CMatrix::Identity(1, 1), norm, d2},
          {gint, CMatrix::Identity(1, 1), norm, dint},
          combine};
}

}  // namespace detail

/// Local assemblies on n_i^2 rows from each channel's trajectory and the
/// interaction assembly on (n1 n2)^2 rows from U1 (x) U2.
inline CrossCouplingAssembly assemble_cross_coupling(const Trajectory& traj1, const Trajectory& traj2,
                                                     const CMatrix& local1, const CMatrix& local2,
                                                     const CMatrix& interaction, double delta1, double delta2,
                                                     double delta_int, NormKind norm = NormKind::two,
                                                     Combine combine = Combine::max) {
  if (traj1.steps() != traj2.steps()) throw DimensionError("cross_coupling: trajectories differ in length");
  const Eigen::Index n1 = traj1.dim(), n2 = traj2.dim();
  if (local1.rows() != n1 || local2.rows() != n2 || interaction.rows() != n1 * n2) {
    throw DimensionError("cross_coupling: operator dimension mismatch");
  }
  Trajectory joint;
  for (int t = 0; t <= traj1.steps(); ++t) joint.samples.push_back(linalg::kron(traj1.samples[t], traj2.samples[t]));
  return detail::cross_from_averages(detail::averaged_column(traj1, {local1}), detail::averaged_column(traj2, {local2}),
                                     detail::averaged_column(joint, {interaction}), delta1, delta2, delta_int, norm,
                                     combine);
}

/// Same measure from the joint trajectory of a product system; the local
/// averages are recovered by partial traces.
inline CrossCouplingAssembly assemble_cross_coupling_joint(const Trajectory& joint, Eigen::Index n1, Eigen::Index n2,
                                                           const CMatrix& local1, const CMatrix& local2,
                                                           const CMatrix& interaction, double delta1, double delta2,
                                                           double delta_int, NormKind norm, Combine combine) {
  if (joint.dim() != n1 * n2) throw DimensionError("cross_coupling: joint dimension mismatch");
  if (local1.rows() != n1 || local2.rows() != n2 || interaction.rows() != n1 * n2) {
    throw DimensionError("cross_coupling: operator dimension mismatch");
  }
  const CMatrix e1 = linalg::kron(local1, linalg::identity(n2));
  const CMatrix e2 = linalg::kron(linalg::identity(n1), local2);
  const CMatrix g1 = linalg::partial_trace_second(time_averaged_hamiltonian(joint, OperatorSequence(joint.steps(), e1)), n1, n2) /
                     static_cast<double>(n2);
  const CMatrix g2 = linalg::partial_trace_first(time_averaged_hamiltonian(joint, OperatorSequence(joint.steps(), e2)), n1, n2) /
                     static_cast<double>(n1);
  return detail::cross_from_averages(linalg::vec(g1), linalg::vec(g2), detail::averaged_column(joint, {interaction}),
                                     delta1, delta2, delta_int, norm, combine);
}

// ---------------------------------------------------------------------------
// Declarative uncertainty descriptions.

/// Noise shaping: an explicit causal filter (normalized, Frobenius measure)
/// or L piecewise-constant intervals.
struct FilterSpec {
  enum class Kind { identity, first_order, impulse, matrix };
  Kind kind = Kind::identity;
  double beta = 0.0;
  RVector response;
  RMatrix matrix;

  NoiseFilter build(double horizon, int samples) const {
    switch (kind) {
      case Kind::identity: return NoiseFilter(RMatrix::Identity(samples, samples));
      case Kind::first_order: return first_order_filter(beta, horizon, samples);
      case Kind::impulse:
        if (response.size() != samples) throw DimensionError("filter impulse response must have length M");
        return toeplitz_from_impulse(response);
      case Kind::matrix:
        if (matrix.rows() != samples) throw DimensionError("filter matrix must be M x M");
        return NoiseFilter(matrix);
    }
    throw DomainError("unknown filter kind");
  }
};

struct NoiseShaping {
  std::optional<FilterSpec> filter;  // unset: interval blocks
  int intervals = 1;
  PwcKind kind = PwcKind::deterministic_inf;
};

struct ConstantParamSpec {
  std::vector<OperatorSequence> operators;
  ParamBound bound = ParamBound::peak;
  double delta = 0.0;
  RMatrix covariance;
};

struct EnergyBoundedSpec {
  double delta = 0.0;
  std::vector<CMatrix> basis;  // empty: default orthonormal basis
};

struct BiasDriftSpec {
  std::vector<OperatorSequence> operators;
  std::vector<double> deltas;
  NormKind norm = NormKind::two;
};

struct TimeVaryingSpec {
  OperatorSequence op;
  FilterSpec filter;
  double delta = 0.0;
};

struct PwcNoiseSpec {
  OperatorSequence op;
  int intervals = 1;
  double delta = 0.0;
  PwcKind kind = PwcKind::deterministic_inf;
};

struct AdditiveCtrlSpec {
  std::vector<int> controls;  // empty: every control
  NoiseShaping shaping;
  double delta = 0.0;
};

/// One noise sequence shared by several (control, operator) terms:
/// Htilde_t = theta_t sum_k u_{t, j_k} C_k.
struct ControlChannel {
  std::vector<std::pair<int, CMatrix>> terms;
};

struct MultiplicativeCtrlSpec {
  std::vector<ControlChannel> channels;  // empty: one channel per control with C = H_j
  NoiseShaping shaping;
  double delta = 0.0;
};

struct ActuatorSpec {
  RVector nominal_response;
  RVector weight_response;
  double delta = 0.0;
};

struct CrossCouplingSpec {
  Eigen::Index dim1 = 2;
  Eigen::Index dim2 = 2;
  CMatrix local1;
  CMatrix local2;
  CMatrix interaction;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta_int = 0.0;
  NormKind norm = NormKind::two;
  Combine combine = Combine::max;
};

struct LindbladSpec {
  std::vector<CMatrix> jumps;
  double delta = 0.0;
  NormKind norm = NormKind::two;
};

struct BipartiteSpec {
  Eigen::Index bath_dim = 1;
  std::vector<CMatrix> bath_hamiltonians;  // one per realization
  std::vector<CMatrix> couplings;          // one per realization, n_S n_B square
  double delta = 1.0;
};

using UncertaintySpec =
    std::variant<ConstantParamSpec, EnergyBoundedSpec, BiasDriftSpec, TimeVaryingSpec, PwcNoiseSpec, AdditiveCtrlSpec,
                 MultiplicativeCtrlSpec, ActuatorSpec, CrossCouplingSpec, LindbladSpec, BipartiteSpec>;

inline const char* variant_tag(const UncertaintySpec& spec) {
  static constexpr const char* tags[] = {"constant_param", "energy_bounded",      "bias_drift", "time_varying",
                                         "pwc_noise",      "additive_ctrl",       "multiplicative_ctrl",
                                         "actuator",       "cross_coupling",      "lindblad",   "bipartite"};
  return tags[spec.index()];
}

/// Largest bound carried by a spec (the scale that sweep magnitudes replace).
inline double nominal_delta(const UncertaintySpec& spec) {
  return std::visit(
      [](const auto& s) -> double {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BiasDriftSpec>) {
          double d = 0.0;
          for (double x : s.deltas) d = std::max(d, x);
          return d;
        } else if constexpr (std::is_same_v<T, CrossCouplingSpec>) {
          return std::max({s.delta1, s.delta2, s.delta_int});
        } else {
          return s.delta;
        }
      },
      spec);
}

/// Copy of the spec with every bound rescaled so that its largest bound
/// equals the given magnitude.
inline UncertaintySpec with_magnitude(UncertaintySpec spec, double magnitude) {
  const double ref = nominal_delta(spec);
  const double scale = ref > 0.0 ? std::abs(magnitude) / ref : 0.0;
  std::visit(
      [&](auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BiasDriftSpec>) {
          for (double& x : s.deltas) x *= scale;
        } else if constexpr (std::is_same_v<T, CrossCouplingSpec>) {
          s.delta1 *= scale;
          s.delta2 *= scale;
          s.delta_int *= scale;
        } else {
          s.delta = ref > 0.0 ? s.delta * scale : std::abs(magnitude);
        }
      },
      spec);
  return spec;
}

/// Assemblies produced by one spec at the current control, merged by
/// `combine`. Bipartite measures are not of assembly form and carry their
/// value directly.
struct TermEvaluation {
  std::vector<RobustnessAssembly> assemblies;
  Combine combine = Combine::sum;
  std::optional<double> direct;

  double value(std::optional<double> lse = std::nullopt) const {
    if (direct) return *direct;
    double acc = 0.0;
    for (const auto& a : assemblies) {
      const double m = measure(a, lse);
      acc = combine == Combine::max ? std::max(acc, m) : acc + m;
    }
    return acc;
  }
};

namespace detail {

inline std::vector<ControlChannel> resolve_channels(const MultiplicativeCtrlSpec& spec, const ControlProblem& problem) {
  if (!spec.channels.empty()) return spec.channels;
  std::vector<ControlChannel> out;
  for (int j = 0; j < problem.num_controls(); ++j) out.push_back({{{j, problem.controls()[j]}}});
  return out;
}

inline std::vector<int> resolve_controls(const std::vector<int>& listed, const ControlProblem& problem) {
  std::vector<int> out = listed;
  if (out.empty())
    for (int j = 0; j < problem.num_controls(); ++j) out.push_back(j);
  for (int j : out)
    if (j < 0 || j >= problem.num_controls()) throw DimensionError("control index out of range");
  return out;
}

/// Upsampled commands on the T/M grid before any actuator filtering.
inline RMatrix grid_commands(const ControlProblem& problem, const RVector& v) {
  RMatrix u(problem.samples(), problem.num_controls());
  for (int j = 0; j < problem.num_controls(); ++j)
    for (int s = 0; s < problem.samples(); ++s) u(s, j) = v(problem.index(problem.pulse_of_step(s), j));
  return u;
}

inline RobustnessAssembly shaped_assembly(const Trajectory& traj, const OperatorSequence& op,
                                          const NoiseShaping& shaping, double delta, const ControlProblem& problem) {
  if (shaping.filter) {
    return assemble_time_varying(traj, op, shaping.filter->build(problem.horizon(), problem.samples()), delta);
  }
  return assemble_pwc_noise(traj, op, shaping.intervals, delta, shaping.kind);
}

/// Per-step operator sum_k u_{t, j_k} C_k of a multiplicative channel.
inline OperatorSequence channel_operators(const ControlChannel& channel, const RMatrix& amplitudes,
                                          const ControlProblem& problem) {
  OperatorSequence seq(problem.samples(), CMatrix::Zero(problem.dim(), problem.dim()));
  for (const auto& [j, c] : channel.terms) {
    if (j < 0 || j >= problem.num_controls()) throw DimensionError("multiplicative_ctrl: control index out of range");
    if (c.rows() != problem.dim()) throw DimensionError("multiplicative_ctrl: operator dimension mismatch");
    for (int s = 0; s < problem.samples(); ++s) seq[s] += amplitudes(s, j) * c;
  }
  return seq;
}

inline std::vector<BathRealization> bath_realizations(const BipartiteSpec& spec, const ControlProblem& problem) {
  if (spec.bath_hamiltonians.size() != spec.couplings.size()) {
    throw DimensionError("bipartite: one coupling per bath Hamiltonian");
  }
  std::vector<BathRealization> out;
  for (std::size_t r = 0; r < spec.couplings.size(); ++r) {
    out.push_back({constant_hamiltonian_trajectory(spec.bath_hamiltonians[r], problem.horizon(), problem.samples()),
                   std::vector<CMatrix>(problem.samples(), spec.couplings[r])});
  }
  return out;
}

}  // namespace detail

inline TermEvaluation evaluate_term(const UncertaintySpec& spec, const ControlProblem& problem, const RVector& v,
                                    const Trajectory& traj) {
  return std::visit(
      [&](const auto& s) -> TermEvaluation {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ConstantParamSpec>) {
          return {{assemble_constant_param(traj, s.operators, s.bound, s.delta, s.covariance)}};
        } else if constexpr (std::is_same_v<T, EnergyBoundedSpec>) {
          const auto basis = s.basis.empty() ? linalg::orthonormal_hermitian_basis(problem.dim()) : s.basis;
          return {{assemble_energy_bounded(traj, basis, s.delta)}};
        } else if constexpr (std::is_same_v<T, BiasDriftSpec>) {
          return {assemble_bias_drift(traj, s.operators, s.deltas, s.norm)};
        } else if constexpr (std::is_same_v<T, TimeVaryingSpec>) {
          return {{assemble_time_varying(traj, s.op, s.filter.build(problem.horizon(), problem.samples()), s.delta)}};
        } else if constexpr (std::is_same_v<T, PwcNoiseSpec>) {
          return {{assemble_pwc_noise(traj, s.op, s.intervals, s.delta, s.kind)}};
        } else if constexpr (std::is_same_v<T, AdditiveCtrlSpec>) {
          TermEvaluation out;
          for (int j : detail::resolve_controls(s.controls, problem)) {
            out.assemblies.push_back(
                detail::shaped_assembly(traj, OperatorSequence{problem.controls()[j]}, s.shaping, s.delta, problem));
          }
          return out;
        } else if constexpr (std::is_same_v<T, MultiplicativeCtrlSpec>) {
          TermEvaluation out;
          const RMatrix amp = grid_amplitudes(problem, v);
          for (const auto& ch : detail::resolve_channels(s, problem)) {
            out.assemblies.push_back(
                detail::shaped_assembly(traj, detail::channel_operators(ch, amp, problem), s.shaping, s.delta, problem));
          }
          return out;
        } else if constexpr (std::is_same_v<T, ActuatorSpec>) {
          return {assemble_actuator(traj, problem.controls(), detail::grid_commands(problem, v), s.nominal_response,
                                    s.weight_response, s.delta)};
        } else if constexpr (std::is_same_v<T, CrossCouplingSpec>) {
          const auto cc = assemble_cross_coupling_joint(traj, s.dim1, s.dim2, s.local1, s.local2, s.interaction,
                                                        s.delta1, s.delta2, s.delta_int, s.norm, s.combine);
          return {{cc.local1, cc.local2, cc.interaction}, s.combine};
        } else if constexpr (std::is_same_v<T, LindbladSpec>) {
          const CMatrix a = lindblad_assembly(traj, s.jumps, problem.horizon());
          return {{{a, CMatrix::Identity(a.cols(), a.cols()), s.norm, s.delta}}};
        } else {
          static_assert(std::is_same_v<T, BipartiteSpec>);
          TermEvaluation out;
          out.direct = s.delta * bipartite_avg_measure(traj, detail::bath_realizations(s, problem));
          return out;
        }
      },
      spec);
}

/// Sum (or max, or column-stack) of the robustness terms of every modeled
/// uncertainty source.
struct RobustnessModel {
  std::vector<UncertaintySpec> terms;
  Combine combine = Combine::sum;
  std::optional<double> lse_temperature;

  bool empty() const { return terms.empty(); }
};

inline double robustness_value(const RobustnessModel& model, const ControlProblem& problem, const RVector& v,
                               const Trajectory& traj) {
  if (model.terms.empty()) return 0.0;
  if (model.combine == Combine::stack) {
    std::vector<CMatrix> blocks;
    std::optional<NormKind> mu;
    Eigen::Index rows = -1, cols = 0;
    for (const auto& spec : model.terms) {
      const auto term = evaluate_term(spec, problem, v, traj);
      if (term.direct) throw DomainError("stack combiner does not support bipartite terms");
      for (const auto& a : term.assemblies) {
        if (mu && *mu != a.mu) throw DomainError("stack combiner needs a common norm");
        mu = a.mu;
        blocks.push_back(a.shaped() * a.delta);
        if (rows >= 0 && blocks.back().rows() != rows) throw DimensionError("stack combiner needs a common row count");
        rows = blocks.back().rows();
        cols += blocks.back().cols();
      }
    }
    if (blocks.empty()) return 0.0;
    CMatrix all(rows, cols);
    Eigen::Index c = 0;
    for (const auto& b : blocks) {
      all.middleCols(c, b.cols()) = b;
      c += b.cols();
    }
    return measure({all, CMatrix::Identity(cols, cols), *mu, 1.0}, model.lse_temperature);
  }
  double acc = 0.0;
  for (const auto& spec : model.terms) {
    const double value = evaluate_term(spec, problem, v, traj).value(model.lse_temperature);
    acc = model.combine == Combine::max ? std::max(acc, value) : acc + value;
  }
  return acc;
}

inline double robustness_value(const RobustnessModel& model, const ControlProblem& problem, const RVector& v) {
  if (model.terms.empty()) return 0.0;
  return robustness_value(model, problem, v, propagate_nominal(problem, v));
}

// ---------------------------------------------------------------------------
// Sampling concrete realizations.

/// random: draw from the set at the given magnitude. fixed: place every
/// constant parameter at exactly `magnitude` (sign kept), which turns a sweep
/// over a signed grid into the deterministic response curve.
enum class SamplingMode { random, fixed };

namespace detail {

inline RVector uniform_box(std::mt19937_64& rng, Eigen::Index n, double half_width) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  RVector x(n);
  for (Eigen::Index k = 0; k < n; ++k) x(k) = half_width * dist(rng);
  return x;
}

inline RVector gaussian(std::mt19937_64& rng, Eigen::Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  RVector x(n);
  for (Eigen::Index k = 0; k < n; ++k) x(k) = dist(rng);
  return x;
}

inline RVector uniform_ball(std::mt19937_64& rng, Eigen::Index n, double radius) {
  RVector x = gaussian(rng, n);
  const double nrm = x.norm();
  if (nrm == 0.0) return RVector::Zero(n);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return x * (radius * std::pow(u(rng), 1.0 / static_cast<double>(n)) / nrm);
}

/// Noise sequence of length M for a shaping description.
inline RVector shaped_noise(std::mt19937_64& rng, const NoiseShaping& shaping, double magnitude,
                            const ControlProblem& problem) {
  const int m = problem.samples();
  if (shaping.filter) {
    const NoiseFilter k = shaping.filter->build(problem.horizon(), m);
    const double kf = k.matrix().norm();
    if (kf == 0.0) return RVector::Zero(m);
    return magnitude * (k.matrix() * gaussian(rng, m)) / kf;
  }
  const RMatrix blocks = interval_blocks(m, shaping.intervals);
  const RVector levels = shaping.kind == PwcKind::deterministic_inf
                             ? uniform_box(rng, shaping.intervals, magnitude)
                             : RVector(magnitude * gaussian(rng, shaping.intervals));
  return blocks * levels;
}

inline void require_random(SamplingMode mode, const char* tag) {
  if (mode == SamplingMode::fixed) {
    throw DomainError(std::string("fixed sampling is not defined for variant ") + tag);
  }
}

}  // namespace detail

/// M Hermitian perturbation samples drawn from the spec's set at the given
/// magnitude (the spec's largest bound is replaced by |magnitude|).
inline PerturbationSamples sample_perturbation(const UncertaintySpec& spec, const ControlProblem& problem,
                                               const RVector& v, double magnitude, std::mt19937_64& rng,
                                               SamplingMode mode = SamplingMode::random) {
  const int m = problem.samples();
  const Eigen::Index n = problem.dim();
  PerturbationSamples out(m, CMatrix::Zero(n, n));
  const double mag = std::abs(magnitude);
  const UncertaintySpec scaled = with_magnitude(spec, magnitude);
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, ConstantParamSpec>) {
          const Eigen::Index count = static_cast<Eigen::Index>(s.operators.size());
          RVector theta;
          if (mode == SamplingMode::fixed) {
            theta = RVector::Constant(count, magnitude);
          } else if (s.bound == ParamBound::peak) {
            theta = detail::uniform_box(rng, count, mag);
          } else if (s.bound == ParamBound::energy) {
            theta = detail::uniform_ball(rng, count, mag);
          } else {
            theta = mag * (linalg::psd_sqrt(s.covariance) * detail::gaussian(rng, count));
          }
          for (int t = 0; t < m; ++t)
            for (Eigen::Index l = 0; l < count; ++l) out[t] += theta(l) * detail::op_at(s.operators[l], t);
        } else if constexpr (std::is_same_v<T, EnergyBoundedSpec>) {
          detail::require_random(mode, "energy_bounded");
          const auto basis = s.basis.empty() ? linalg::orthonormal_hermitian_basis(n) : s.basis;
          const RVector theta = detail::uniform_ball(rng, static_cast<Eigen::Index>(basis.size()), mag);
          CMatrix h = CMatrix::Zero(n, n);
          for (std::size_t i = 0; i < basis.size(); ++i) h += theta(static_cast<Eigen::Index>(i)) * basis[i];
          for (auto& x : out) x = h;
        } else if constexpr (std::is_same_v<T, BiasDriftSpec>) {
          const auto& sd = std::get<BiasDriftSpec>(scaled);
          const RMatrix h = drift_weights(m);
          for (std::size_t l = 0; l < sd.operators.size(); ++l) {
            RVector c;
            if (mode == SamplingMode::fixed) {
              c = RVector::Constant(2, magnitude < 0.0 ? -sd.deltas[l] : sd.deltas[l]);
            } else if (sd.norm == NormKind::inf) {
              c = detail::uniform_box(rng, 2, sd.deltas[l]);
            } else {
              c = detail::uniform_ball(rng, 2, sd.deltas[l]);
            }
            const RVector theta = h * c;
            for (int t = 0; t < m; ++t) out[t] += theta(t) * detail::op_at(sd.operators[l], t);
          }
        } else if constexpr (std::is_same_v<T, TimeVaryingSpec>) {
          detail::require_random(mode, "time_varying");
          const RVector theta = detail::shaped_noise(rng, NoiseShaping{s.filter, 1, PwcKind::probabilistic}, mag, problem);
          for (int t = 0; t < m; ++t) out[t] = theta(t) * detail::op_at(s.op, t);
        } else if constexpr (std::is_same_v<T, PwcNoiseSpec>) {
          detail::require_random(mode, "pwc_noise");
          const RVector theta = detail::shaped_noise(rng, NoiseShaping{std::nullopt, s.intervals, s.kind}, mag, problem);
          for (int t = 0; t < m; ++t) out[t] = theta(t) * detail::op_at(s.op, t);
        } else if constexpr (std::is_same_v<T, AdditiveCtrlSpec>) {
          detail::require_random(mode, "additive_ctrl");
          for (int j : detail::resolve_controls(s.controls, problem)) {
            const RVector theta = detail::shaped_noise(rng, s.shaping, mag, problem);
            for (int t = 0; t < m; ++t) out[t] += theta(t) * problem.controls()[j];
          }
        } else if constexpr (std::is_same_v<T, MultiplicativeCtrlSpec>) {
          detail::require_random(mode, "multiplicative_ctrl");
          const RMatrix amp = grid_amplitudes(problem, v);
          for (const auto& ch : detail::resolve_channels(s, problem)) {
            const OperatorSequence ops = detail::channel_operators(ch, amp, problem);
            const RVector theta = detail::shaped_noise(rng, s.shaping, mag, problem);
            for (int t = 0; t < m; ++t) out[t] += theta(t) * ops[t];
          }
        } else if constexpr (std::is_same_v<T, ActuatorSpec>) {
          double gain = magnitude;
          if (mode == SamplingMode::random) gain = detail::uniform_box(rng, 1, mag)(0);
          const RMatrix k = linalg::lower_toeplitz(convolve_truncated(s.weight_response, s.nominal_response));
          const RMatrix theta = gain * (k * detail::grid_commands(problem, v));
          for (int t = 0; t < m; ++t)
            for (int j = 0; j < problem.num_controls(); ++j) out[t] += theta(t, j) * problem.controls()[j];
        } else if constexpr (std::is_same_v<T, CrossCouplingSpec>) {
          const auto& sc = std::get<CrossCouplingSpec>(scaled);
          RVector theta(3);
          if (mode == SamplingMode::fixed) {
            const double sign = magnitude < 0.0 ? -1.0 : 1.0;
            theta << sign * sc.delta1, sign * sc.delta2, sign * sc.delta_int;
          } else {
            const RVector u = detail::uniform_box(rng, 3, 1.0);
            theta << u(0) * sc.delta1, u(1) * sc.delta2, u(2) * sc.delta_int;
          }
          const CMatrix h = theta(0) * linalg::kron(sc.local1, linalg::identity(sc.dim2)) +
                            theta(1) * linalg::kron(linalg::identity(sc.dim1), sc.local2) + theta(2) * sc.interaction;
          if (h.rows() != n) throw DimensionError("cross_coupling: joint dimension does not match the problem");
          for (auto& x : out) x = h;
        } else {
          throw DomainError(std::string("sampling is not supported for variant ") + variant_tag(spec));
        }
      },
      spec);
  for (auto& x : out) x = 0.5 * (x + x.adjoint());
  return out;
}

inline PerturbationSamples sample_perturbation(const UncertaintySpec& spec, const ControlProblem& problem,
                                               const RVector& v, double magnitude, std::uint64_t seed,
                                               SamplingMode mode = SamplingMode::random) {
  std::mt19937_64 rng(seed);
  return sample_perturbation(spec, problem, v, magnitude, rng, mode);
}

/// Largest nominal bound over a list of specs.
inline double nominal_delta(const std::vector<UncertaintySpec>& specs) {
  double d = 0.0;
  for (const auto& s : specs) d = std::max(d, nominal_delta(s));
  return d;
}

/// Sum of independent draws from several specs. The magnitude rescales all
/// bounds by one common factor, so the largest bound across the list equals
/// |magnitude| and the ratios between sources are kept. An empty list gives
/// the zero perturbation.
inline PerturbationSamples sample_joint_perturbation(const std::vector<UncertaintySpec>& specs,
                                                     const ControlProblem& problem, const RVector& v,
                                                     double magnitude, std::mt19937_64& rng,
                                                     SamplingMode mode = SamplingMode::random) {
  if (specs.size() == 1) return sample_perturbation(specs.front(), problem, v, magnitude, rng, mode);
  const double ref = nominal_delta(specs);
  PerturbationSamples out(problem.samples(), CMatrix::Zero(problem.dim(), problem.dim()));
  for (const auto& spec : specs) {
    const double own = ref > 0.0 ? magnitude * nominal_delta(spec) / ref : magnitude;
    const PerturbationSamples h = sample_perturbation(spec, problem, v, own, rng, mode);
    for (std::size_t t = 0; t < out.size(); ++t) out[t] += h[t];
  }
  return out;
}

}  // namespace robustpulse
