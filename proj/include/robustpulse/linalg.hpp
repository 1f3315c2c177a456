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

// linalg.hpp: dense complex helpers shared by every module (Pauli strings,
// vec/Kronecker, Hermitian exponentials, norms, PSD square roots).

#pragma once

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace robustpulse {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

inline constexpr cplx kI{0.0, 1.0};

/// Thrown when operand shapes do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a value violates a documented domain (non-Hermitian input,
/// non-finite amplitude, fidelity outside [0,1], ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

namespace linalg {

inline CMatrix identity(Eigen::Index n) { return CMatrix::Identity(n, n); }

inline CMatrix pauli(char c) {
  CMatrix p(2, 2);
  switch (c) {
    case 'I': p << 1.0, 0.0, 0.0, 1.0; break;
    case 'X': p << 0.0, 1.0, 1.0, 0.0; break;
    case 'Y': p << 0.0, -kI, kI, 0.0; break;
    case 'Z': p << 1.0, 0.0, 0.0, -1.0; break;
    default:
      throw DomainError(std::string("unknown Pauli character '") + c + "'");
  }
  return p;
}

inline CMatrix kron(const CMatrix& a, const CMatrix& b) {
  return Eigen::kroneckerProduct(a, b).eval();
}

/// Tensor product of single-qubit Paulis; the leftmost character is the first
/// tensor factor.
inline CMatrix pauli_string(std::string_view s) {
  if (s.empty()) throw DomainError("empty Pauli string");
  for (char c : s) {
    if (c != 'I' && c != 'X' && c != 'Y' && c != 'Z') {
      throw DomainError("malformed Pauli string \"" + std::string(s) +
                        "\": invalid token '" + std::string(1, c) + "'");
    }
  }
  CMatrix out = pauli(s.front());
  for (std::size_t k = 1; k < s.size(); ++k) out = kron(out, pauli(s[k]));
  return out;
}

/// Column-stacking vectorization, vec(AXB) = (B^T (x) A) vec(X).
inline CVector vec(const CMatrix& a) {
  return Eigen::Map<const CVector>(a.data(), a.size());
}

inline CMatrix unvec(const CVector& v, Eigen::Index rows) {
  if (rows <= 0 || v.size() % rows != 0) {
    throw DimensionError("unvec: length not divisible by row count");
  }
  return Eigen::Map<const CMatrix>(v.data(), rows, v.size() / rows);
}

inline bool is_hermitian(const CMatrix& h, double rel_tol = 1e-12) {
  if (h.rows() != h.cols()) return false;
  const double scale = std::max(1.0, h.norm());
  return (h - h.adjoint()).norm() <= rel_tol * scale;
}

inline bool is_unitary(const CMatrix& u, double tol = 1e-12) {
  if (u.rows() != u.cols()) return false;
  return (u.adjoint() * u - identity(u.rows())).norm() <=
         tol * std::sqrt(static_cast<double>(u.rows()));
}

inline void require_hermitian(const CMatrix& h, std::string_view what) {
  if (h.rows() != h.cols()) {
    throw DimensionError(std::string(what) + ": matrix is not square");
  }
  if (!h.allFinite()) throw DomainError(std::string(what) + ": non-finite entry");
  if (!is_hermitian(h)) throw DomainError(std::string(what) + ": not Hermitian");
}

/// Eigendecomposition of a Hermitian step generator, reused for the
/// exponential and its directional derivatives.
struct HermitianEigen {
  RVector values;
  CMatrix vectors;

  explicit HermitianEigen(const CMatrix& h) {
    Eigen::SelfAdjointEigenSolver<CMatrix> es(h);
    if (es.info() != Eigen::Success) {
      throw DomainError("Hermitian eigendecomposition failed");
    }
    values = es.eigenvalues();
    vectors = es.eigenvectors();
  }

  /// exp(-i tau H)
  CMatrix propagator(double tau) const {
    CVector phases(values.size());
    for (Eigen::Index k = 0; k < values.size(); ++k) {
      phases(k) = std::exp(-kI * tau * values(k));
    }
    return vectors * phases.asDiagonal() * vectors.adjoint();
  }

  /// Divided-difference kernel of exp(-i tau .) in this eigenbasis: the
  /// Frechet derivative of exp(-i tau H) along dH is
  /// V (Phi o (V^dag (-i tau dH) V)) V^dag.
  CMatrix frechet_kernel(double tau) const {
    const Eigen::Index n = values.size();
    CMatrix phi(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
      const cplx ea = std::exp(-kI * tau * values(a));
      for (Eigen::Index b = 0; b < n; ++b) {
        const double gap = values(a) - values(b);
        if (std::abs(gap * tau) < 1e-9) {
          // second-order expansion of the divided difference
          phi(a, b) = ea * (1.0 + kI * tau * gap / 2.0);
        } else {
          const cplx eb = std::exp(-kI * tau * values(b));
          phi(a, b) = (ea - eb) / (-kI * tau * gap);
        }
      }
    }
    return phi;
  }
};

inline CMatrix expm_hermitian(const CMatrix& h, double tau) {
  return HermitianEigen(h).propagator(tau);
}

/// General matrix exponential through Pade scaling and squaring (used for the
/// non-Hermitian lifted Lindblad generator).
inline CMatrix expm_general(const CMatrix& a) {
  const double nrm = a.cwiseAbs().rowwise().sum().maxCoeff();
  int squarings = 0;
  if (nrm > 0.5) squarings = std::max(0, static_cast<int>(std::ceil(std::log2(nrm / 0.5))));
  const CMatrix x = a / std::pow(2.0, squarings);
  // degree-8 diagonal Pade
  static constexpr double c[] = {1.0,         0.5,          7.0 / 60.0,        1.0 / 60.0,       1.0 / 624.0,
                                 1.0 / 9360.0, 1.0 / 205920.0, 1.0 / 7207200.0, 1.0 / 518918400.0};
  const Eigen::Index n = a.rows();
  CMatrix num = CMatrix::Identity(n, n) * c[0];
  CMatrix den = CMatrix::Identity(n, n) * c[0];
  CMatrix power = CMatrix::Identity(n, n);
  double sign = 1.0;
  for (int k = 1; k <= 8; ++k) {
    power = power * x;
    sign = -sign;
    num += c[k] * power;
    den += sign * c[k] * power;
  }
  CMatrix e = den.partialPivLu().solve(num);
  for (int k = 0; k < squarings; ++k) e = e * e;
  return e;
}

/// Induced matrix norms used by the robustness measures.
enum class NormKind { inf, two, fro, fro_sq };

inline const char* to_string(NormKind k) {
  switch (k) {
    case NormKind::inf: return "inf";
    case NormKind::two: return "two";
    case NormKind::fro: return "fro";
    case NormKind::fro_sq: return "fro_sq";
  }
  return "?";
}

inline NormKind norm_kind_from_string(std::string_view s) {
  if (s == "inf") return NormKind::inf;
  if (s == "two") return NormKind::two;
  if (s == "fro") return NormKind::fro;
  if (s == "fro_sq") return NormKind::fro_sq;
  throw DomainError("unknown norm tag \"" + std::string(s) + "\"");
}

/// max over rows of the sum of complex moduli
inline double max_row_sum(const CMatrix& a) {
  if (a.size() == 0) return 0.0;
  return a.cwiseAbs().rowwise().sum().maxCoeff();
}

inline double spectral_norm(const CMatrix& a) {
  if (a.size() == 0) return 0.0;
  if (a.cols() == 1) return a.col(0).norm();
  if (a.rows() == 1) return a.row(0).norm();
  Eigen::JacobiSVD<CMatrix> svd(a);
  return svd.singularValues()(0);
}

inline double spectral_norm_real(const RMatrix& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<RMatrix> svd(a);
  return svd.singularValues()(0);
}

inline double matrix_norm(const CMatrix& a, NormKind kind) {
  switch (kind) {
    case NormKind::inf: return max_row_sum(a);
    case NormKind::two: return spectral_norm(a);
    case NormKind::fro: return a.norm();
    case NormKind::fro_sq: return a.squaredNorm();
  }
  return 0.0;
}

/// Vector norm dual-paired with matrix_norm (the norm in which |vec G| is
/// bounded by the induced measure).
inline double vector_norm(const CVector& x, NormKind kind) {
  switch (kind) {
    case NormKind::inf: return x.size() ? x.cwiseAbs().maxCoeff() : 0.0;
    case NormKind::two:
    case NormKind::fro: return x.norm();
    case NormKind::fro_sq: return x.squaredNorm();
  }
  return 0.0;
}

/// Symmetric PSD square root. Eigenvalues in [-1e-12, 0) are clipped to zero;
/// anything more negative is rejected.
inline RMatrix psd_sqrt(const RMatrix& c) {
  if (c.rows() != c.cols()) throw DimensionError("psd_sqrt: matrix not square");
  if (((c - c.transpose()).norm()) > 1e-12 * std::max(1.0, c.norm())) {
    throw DomainError("psd_sqrt: matrix not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<RMatrix> es(0.5 * (c + c.transpose()));
  RVector ev = es.eigenvalues();
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    if (ev(k) < -1e-12) throw DomainError("psd_sqrt: matrix is not positive semidefinite");
    ev(k) = ev(k) < 0.0 ? 0.0 : std::sqrt(ev(k));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Orthonormal Hermitian basis of n x n matrices under the Frobenius inner
/// product: normalized Pauli strings when n is a power of two, normalized
/// generalized Gell-Mann matrices otherwise.
/// Symmetric part with negative eigenvalues set to zero.
inline RMatrix psd_part(const RMatrix& a) {
  Eigen::SelfAdjointEigenSolver<RMatrix> es(0.5 * (a + a.transpose()));
  const RVector ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline std::vector<CMatrix> orthonormal_hermitian_basis(Eigen::Index n) {
  std::vector<CMatrix> basis;
  if (n <= 0) throw DimensionError("basis dimension must be positive");
  int qubits = 0;
  while ((Eigen::Index{1} << qubits) < n) ++qubits;
  const double rn = std::sqrt(static_cast<double>(n));
  if ((Eigen::Index{1} << qubits) == n && qubits > 0) {
    const Eigen::Index count = n * n;
    for (Eigen::Index code = 0; code < count; ++code) {
      std::string s;
      Eigen::Index rest = code;
      for (int q = 0; q < qubits; ++q) {
        s.insert(s.begin(), "IXYZ"[rest % 4]);
        rest /= 4;
      }
      basis.push_back(pauli_string(s) / rn);
    }
    return basis;
  }
  basis.push_back(identity(n) / rn);
  const double r2 = std::sqrt(2.0);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index k = j + 1; k < n; ++k) {
      CMatrix sym = CMatrix::Zero(n, n);
      sym(j, k) = sym(k, j) = 1.0 / r2;
      basis.push_back(sym);
      CMatrix asym = CMatrix::Zero(n, n);
      asym(j, k) = -kI / r2;
      asym(k, j) = kI / r2;
      basis.push_back(asym);
    }
  }
  for (Eigen::Index l = 1; l < n; ++l) {
    CMatrix d = CMatrix::Zero(n, n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(l * (l + 1)));
    for (Eigen::Index k = 0; k < l; ++k) d(k, k) = scale;
    d(l, l) = -static_cast<double>(l) * scale;
    basis.push_back(d);
  }
  return basis;
}

/// Partial trace over the second tensor factor of an (n1 n2) x (n1 n2) matrix.
inline CMatrix partial_trace_second(const CMatrix& a, Eigen::Index n1, Eigen::Index n2) {
  if (a.rows() != n1 * n2 || a.cols() != n1 * n2) {
    throw DimensionError("partial_trace_second: dimension mismatch");
  }
  CMatrix out = CMatrix::Zero(n1, n1);
  for (Eigen::Index i = 0; i < n1; ++i)
    for (Eigen::Index j = 0; j < n1; ++j)
      for (Eigen::Index k = 0; k < n2; ++k) out(i, j) += a(i * n2 + k, j * n2 + k);
  return out;
}

/// Partial trace over the first tensor factor.
inline CMatrix partial_trace_first(const CMatrix& a, Eigen::Index n1, Eigen::Index n2) {
  if (a.rows() != n1 * n2 || a.cols() != n1 * n2) {
    throw DimensionError("partial_trace_first: dimension mismatch");
  }
  CMatrix out = CMatrix::Zero(n2, n2);
  for (Eigen::Index i = 0; i < n2; ++i)
    for (Eigen::Index j = 0; j < n2; ++j)
      for (Eigen::Index k = 0; k < n1; ++k) out(i, j) += a(k * n2 + i, k * n2 + j);
  return out;
}

/// Lower-triangular Toeplitz matrix with the given first column.
inline RMatrix lower_toeplitz(const RVector& first_column) {
  const Eigen::Index m = first_column.size();
  RMatrix k = RMatrix::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) k(i, j) = first_column(i - j);
  return k;
}

}  // namespace linalg
}  // namespace robustpulse
