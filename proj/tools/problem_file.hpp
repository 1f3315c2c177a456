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

// problem_file.hpp: JSON problem files. Parsing validates against a strict
// schema and produces both the runtime objects and a normalized document
// (every default written out) that serializes and re-parses unchanged.

#pragma once

#include "robustpulse/robustpulse.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace robustpulse::cli {

using Json = nlohmann::ordered_json;

class ProblemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct InitialControls {
  double constant = 0.0;
  double noise = 0.0;
  std::uint64_t seed = 0;
  std::optional<RVector> values;
};

struct EvaluationConfig {
  std::vector<double> magnitudes{0.0};
  int samples = 100;
  std::uint64_t seed = 0;
  SamplingMode mode = SamplingMode::random;
  std::vector<UncertaintySpec> uncertainty;  // empty: the robustness model's terms
  int check_samples = 20;
};

struct ProblemFile {
  Json document;  // normalized
  std::optional<ControlProblem> problem;
  RobustnessModel model;
  OptimizerConfig optimizer;
  InitialControls initial;
  EvaluationConfig evaluation;
  std::vector<std::string> warnings;

  const ControlProblem& system() const { return *problem; }
  RVector initial_controls() const;
  const std::vector<UncertaintySpec>& evaluation_terms() const {
    return evaluation.uncertainty.empty() ? model.terms : evaluation.uncertainty;
  }
};

namespace detail {

struct Context {
  bool strict = true;
  std::vector<std::string>* warnings = nullptr;
};

[[noreturn]] inline void fail(const std::string& path, const std::string& msg) {
  throw ProblemError("field '" + path + "': " + msg);
}

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

inline std::string at(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

inline const Json& require_object(const Json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  return j;
}

inline void check_keys(const Json& obj, const std::string& path, std::initializer_list<const char*> allowed,
                       const Context& ctx) {
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (ok.count(it.key())) continue;
    if (ctx.strict) fail(join(path, it.key()), "unknown key");
    if (ctx.warnings) ctx.warnings->push_back("ignoring unknown key '" + join(path, it.key()) + "'");
  }
}

inline const Json& field(const Json& obj, const char* key, const std::string& path) {
  if (!obj.contains(key)) fail(join(path, key), "missing required field");
  return obj.at(key);
}

inline double number(const Json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  const double x = j.get<double>();
  if (!std::isfinite(x)) fail(path, "must be finite");
  return x;
}

inline long long integer(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<long long>();
}

inline std::string text(const Json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

inline double opt_number(const Json& obj, const char* key, double dflt, const std::string& path) {
  return obj.contains(key) ? number(obj.at(key), join(path, key)) : dflt;
}

inline long long opt_integer(const Json& obj, const char* key, long long dflt, const std::string& path) {
  return obj.contains(key) ? integer(obj.at(key), join(path, key)) : dflt;
}

inline std::string opt_text(const Json& obj, const char* key, const std::string& dflt, const std::string& path) {
  return obj.contains(key) ? text(obj.at(key), join(path, key)) : dflt;
}

inline cplx complex_number(const Json& j, const std::string& path) {
  if (j.is_number()) return {number(j, path), 0.0};
  if (j.is_array() && j.size() == 2) return {number(j[0], path + "[0]"), number(j[1], path + "[1]")};
  fail(path, "expected a number or an [re, im] pair");
}

inline RVector real_vector(const Json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of numbers");
  RVector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number(j[i], at(path, i));
  return v;
}

inline RMatrix real_matrix(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) fail(path, "expected a nonempty array of rows");
  const std::size_t cols = j[0].size();
  RMatrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) fail(at(path, r), "rows must have equal length");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = number(j[r][c], at(at(path, r), c));
  }
  return m;
}

inline CMatrix complex_matrix(const Json& j, const std::string& path) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) fail(path, "expected a nonempty array of rows");
  const std::size_t cols = j[0].size();
  CMatrix m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols) fail(at(path, r), "rows must have equal length");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = complex_number(j[r][c], at(at(path, r), c));
  }
  return m;
}

inline CMatrix pauli_term(const std::string& s, Eigen::Index n, const std::string& path) {
  CMatrix p;
  try {
    p = linalg::pauli_string(s);
  } catch (const std::exception& e) {
    fail(path, e.what());
  }
  if (p.rows() != n) {
    fail(path, "Pauli string \"" + s + "\" has dimension " + std::to_string(p.rows()) + ", expected " +
                   std::to_string(n));
  }
  return p;
}

/// "XZ" | [["XX", c], ["YY", c], ...] | {"matrix": [[[re, im], ...], ...]}
inline CMatrix operator_value(const Json& j, Eigen::Index n, const std::string& path, const Context& ctx) {
  if (j.is_string()) return pauli_term(j.get<std::string>(), n, path);
  if (j.is_array()) {
    if (j.empty()) fail(path, "empty Pauli sum");
    CMatrix acc = CMatrix::Zero(n, n);
    for (std::size_t i = 0; i < j.size(); ++i) {
      const Json& term = j[i];
      const std::string p = at(path, i);
      if (!term.is_array() || term.size() != 2) fail(p, "expected a [\"PauliString\", coefficient] pair");
      acc += complex_number(term[1], p + "[1]") * pauli_term(text(term[0], p + "[0]"), n, p + "[0]");
    }
    return acc;
  }
  if (j.is_object()) {
    check_keys(j, path, {"matrix"}, ctx);
    CMatrix m = complex_matrix(field(j, "matrix", path), join(path, "matrix"));
    if (m.rows() != n || m.cols() != n) fail(join(path, "matrix"), "expected a " + std::to_string(n) + "x" +
                                                                    std::to_string(n) + " matrix");
    return m;
  }
  fail(path, "expected a Pauli string, a Pauli sum or a {\"matrix\": ...} object");
}

inline CMatrix hermitian_operator(const Json& j, Eigen::Index n, const std::string& path, const Context& ctx) {
  CMatrix h = operator_value(j, n, path, ctx);
  if (!linalg::is_hermitian(h)) fail(path, "operator is not Hermitian");
  return h;
}

/// A constant operator or {"sequence": [op, ...]} with M entries.
inline OperatorSequence operator_sequence(const Json& j, Eigen::Index n, int samples, const std::string& path,
                                          const Context& ctx) {
  if (j.is_object() && j.contains("sequence")) {
    check_keys(j, path, {"sequence"}, ctx);
    const Json& seq = j.at("sequence");
    if (!seq.is_array() || static_cast<int>(seq.size()) != samples) {
      fail(join(path, "sequence"), "expected M = " + std::to_string(samples) + " operators");
    }
    OperatorSequence out;
    for (std::size_t i = 0; i < seq.size(); ++i) out.push_back(hermitian_operator(seq[i], n, at(join(path, "sequence"), i), ctx));
    return out;
  }
  return {hermitian_operator(j, n, path, ctx)};
}

inline CMatrix named_gate(const std::string& name, const std::string& path) {
  const double r = 1.0 / std::sqrt(2.0);
  if (name == "I") return linalg::identity(2);
  if (name == "X" || name == "Y" || name == "Z") return linalg::pauli(name[0]);
  if (name == "H") return (linalg::pauli('X') + linalg::pauli('Z')) * r;
  if (name == "CNOT") {
    CMatrix c = CMatrix::Zero(4, 4);
    c(0, 0) = c(1, 1) = c(2, 3) = c(3, 2) = 1.0;
    return c;
  }
  fail(path, "unknown gate \"" + name + "\" (expected I, X, Y, Z, H, CNOT)");
}

/// "H" | ["H", "I"] (tensor product, leftmost first) | {"matrix": ...}
inline CMatrix target_value(const Json& j, Eigen::Index n, const std::string& path, const Context& ctx) {
  CMatrix w;
  if (j.is_string()) {
    w = named_gate(j.get<std::string>(), path);
  } else if (j.is_array()) {
    if (j.empty()) fail(path, "empty gate list");
    w = linalg::identity(1);
    for (std::size_t i = 0; i < j.size(); ++i) w = linalg::kron(w, named_gate(text(j[i], at(path, i)), at(path, i)));
  } else {
    w = operator_value(j, n, path, ctx);
  }
  if (w.rows() != n) fail(path, "target dimension " + std::to_string(w.rows()) + " does not match n = " + std::to_string(n));
  if (!linalg::is_unitary(w, 1e-12)) fail(path, "target is not unitary");
  return w;
}

inline NormKind norm_value(const Json& obj, const char* key, NormKind dflt, const std::string& path, Json& out) {
  const std::string s = opt_text(obj, key, linalg::to_string(dflt), path);
  NormKind k;
  try {
    k = linalg::norm_kind_from_string(s);
  } catch (const std::exception& e) {
    fail(join(path, key), e.what());
  }
  out[key] = s;
  return k;
}

inline double nonneg(const Json& obj, const char* key, const std::string& path, Json& out,
                     std::optional<double> dflt = std::nullopt) {
  double x;
  if (!obj.contains(key) && dflt) {
    x = *dflt;
  } else {
    x = number(field(obj, key, path), join(path, key));
  }
  if (x < 0.0) fail(join(path, key), "must be nonnegative");
  out[key] = x;
  return x;
}

inline FilterSpec filter_value(const Json& j, int samples, const std::string& path, const Context& ctx, Json& out) {
  require_object(j, path);
  check_keys(j, path, {"kind", "beta", "response", "matrix"}, ctx);
  const std::string kind = text(field(j, "kind", path), join(path, "kind"));
  FilterSpec f;
  out = Json::object();
  out["kind"] = kind;
  if (kind == "identity") {
    f.kind = FilterSpec::Kind::identity;
  } else if (kind == "first_order") {
    f.kind = FilterSpec::Kind::first_order;
    f.beta = number(field(j, "beta", path), join(path, "beta"));
    if (!(f.beta > 0.0)) fail(join(path, "beta"), "time constant must be positive");
    out["beta"] = f.beta;
  } else if (kind == "impulse") {
    f.kind = FilterSpec::Kind::impulse;
    f.response = real_vector(field(j, "response", path), join(path, "response"));
    if (f.response.size() != samples) fail(join(path, "response"), "expected M = " + std::to_string(samples) + " entries");
    out["response"] = j.at("response");
  } else if (kind == "matrix") {
    f.kind = FilterSpec::Kind::matrix;
    f.matrix = real_matrix(field(j, "matrix", path), join(path, "matrix"));
    if (f.matrix.rows() != samples || f.matrix.cols() != samples) fail(join(path, "matrix"), "expected an M x M matrix");
    try {
      NoiseFilter check(f.matrix);
    } catch (const std::exception& e) {
      fail(join(path, "matrix"), e.what());
    }
    out["matrix"] = j.at("matrix");
  } else {
    fail(join(path, "kind"), "unknown filter kind \"" + kind + "\" (expected identity, first_order, impulse, matrix)");
  }
  return f;
}

inline PwcKind pwc_kind_value(const Json& obj, const std::string& path, Json& out) {
  const std::string s = opt_text(obj, "kind", "deterministic_inf", path);
  out["kind"] = s;
  if (s == "deterministic_inf") return PwcKind::deterministic_inf;
  if (s == "probabilistic") return PwcKind::probabilistic;
  fail(join(path, "kind"), "expected deterministic_inf or probabilistic");
}

inline int intervals_value(const Json& obj, int samples, const std::string& path, Json& out) {
  const long long l = opt_integer(obj, "intervals", 1, path);
  if (l < 1 || samples % l != 0) fail(join(path, "intervals"), "interval count must divide M = " + std::to_string(samples));
  out["intervals"] = l;
  return static_cast<int>(l);
}

/// {"filter": {...}} or {"intervals": L, "kind": ...}
inline NoiseShaping shaping_value(const Json& j, int samples, const std::string& path, const Context& ctx, Json& out) {
  require_object(j, path);
  check_keys(j, path, {"filter", "intervals", "kind"}, ctx);
  NoiseShaping s;
  out = Json::object();
  if (j.contains("filter")) {
    if (j.contains("intervals")) fail(path, "give either a filter or an interval count, not both");
    Json f;
    s.filter = filter_value(j.at("filter"), samples, join(path, "filter"), ctx, f);
    out["filter"] = f;
    return s;
  }
  s.intervals = intervals_value(j, samples, path, out);
  s.kind = pwc_kind_value(j, path, out);
  return s;
}

inline UncertaintySpec uncertainty_value(const Json& j, const ControlProblem& problem, const std::string& path,
                                         const Context& ctx, Json& out) {
  require_object(j, path);
  const std::string type = text(field(j, "type", path), join(path, "type"));
  const Eigen::Index n = problem.dim();
  const int m = problem.samples();
  out = Json::object();
  out["type"] = type;
  auto ops_list = [&](const char* key) {
    const Json& arr = field(j, key, path);
    if (!arr.is_array() || arr.empty()) fail(join(path, key), "expected a nonempty list of operators");
    std::vector<OperatorSequence> ops;
    for (std::size_t i = 0; i < arr.size(); ++i) ops.push_back(operator_sequence(arr[i], n, m, at(join(path, key), i), ctx));
    out[key] = arr;
    return ops;
  };
  if (type == "constant_param") {
    check_keys(j, path, {"type", "operators", "bound", "delta", "covariance"}, ctx);
    ConstantParamSpec s;
    s.operators = ops_list("operators");
    const std::string bound = opt_text(j, "bound", "peak", path);
    out["bound"] = bound;
    if (bound == "peak") s.bound = ParamBound::peak;
    else if (bound == "energy") s.bound = ParamBound::energy;
    else if (bound == "covariance") s.bound = ParamBound::covariance;
    else fail(join(path, "bound"), "expected peak, energy or covariance");
    s.delta = nonneg(j, "delta", path, out, s.bound == ParamBound::covariance ? std::optional<double>(1.0) : std::nullopt);
    if (s.bound == ParamBound::covariance) {
      s.covariance = real_matrix(field(j, "covariance", path), join(path, "covariance"));
      const auto l = static_cast<Eigen::Index>(s.operators.size());
      if (s.covariance.rows() != l || s.covariance.cols() != l) fail(join(path, "covariance"), "expected an L x L matrix");
      try {
        linalg::psd_sqrt(s.covariance);
      } catch (const std::exception& e) {
        fail(join(path, "covariance"), e.what());
      }
      out["covariance"] = j.at("covariance");
    } else if (j.contains("covariance")) {
      fail(join(path, "covariance"), "only used with bound = covariance");
    }
    for (std::size_t l = 0; l < s.operators.size(); ++l) {
      if (std::any_of(s.operators[l].begin(), s.operators[l].end(),
                      [](const CMatrix& b) { return linalg::spectral_norm(b) > 1.0 + 1e-12; })) {
        const std::string msg = "operator has spectral norm above 1";
        if (ctx.strict) fail(at(join(path, "operators"), l), msg);
        if (ctx.warnings) ctx.warnings->push_back(at(join(path, "operators"), l) + ": " + msg);
      }
    }
    return s;
  }
  if (type == "energy_bounded") {
    check_keys(j, path, {"type", "delta", "basis"}, ctx);
    EnergyBoundedSpec s;
    s.delta = nonneg(j, "delta", path, out);
    if (j.contains("basis") && !(j.at("basis").is_string() && j.at("basis") == "default")) {
      const Json& arr = j.at("basis");
      if (!arr.is_array()) fail(join(path, "basis"), "expected \"default\" or a list of operators");
      for (std::size_t i = 0; i < arr.size(); ++i) s.basis.push_back(hermitian_operator(arr[i], n, at(join(path, "basis"), i), ctx));
      out["basis"] = arr;
    } else {
      out["basis"] = "default";
    }
    return s;
  }
  if (type == "bias_drift") {
    check_keys(j, path, {"type", "operators", "deltas", "norm"}, ctx);
    BiasDriftSpec s;
    s.operators = ops_list("operators");
    const RVector d = real_vector(field(j, "deltas", path), join(path, "deltas"));
    if (d.size() != static_cast<Eigen::Index>(s.operators.size())) fail(join(path, "deltas"), "one bound per operator");
    if ((d.array() < 0.0).any()) fail(join(path, "deltas"), "bounds must be nonnegative");
    s.deltas.assign(d.data(), d.data() + d.size());
    out["deltas"] = s.deltas;
    s.norm = norm_value(j, "norm", NormKind::two, path, out);
    if (m < 2) fail(path, "bias_drift needs M >= 2");
    return s;
  }
  if (type == "time_varying") {
    check_keys(j, path, {"type", "operator", "filter", "delta"}, ctx);
    TimeVaryingSpec s;
    s.op = operator_sequence(field(j, "operator", path), n, m, join(path, "operator"), ctx);
    out["operator"] = j.at("operator");
    Json f;
    s.filter = filter_value(field(j, "filter", path), m, join(path, "filter"), ctx, f);
    out["filter"] = f;
    s.delta = nonneg(j, "delta", path, out);
    return s;
  }
  if (type == "pwc_noise") {
    check_keys(j, path, {"type", "operator", "intervals", "delta", "kind"}, ctx);
    PwcNoiseSpec s;
    s.op = operator_sequence(field(j, "operator", path), n, m, join(path, "operator"), ctx);
    out["operator"] = j.at("operator");
    s.intervals = intervals_value(j, m, path, out);
    s.delta = nonneg(j, "delta", path, out);
    s.kind = pwc_kind_value(j, path, out);
    return s;
  }
  if (type == "additive_ctrl") {
    check_keys(j, path, {"type", "controls", "shaping", "delta"}, ctx);
    AdditiveCtrlSpec s;
    Json controls = Json::array();
    if (j.contains("controls")) {
      const Json& arr = j.at("controls");
      if (!arr.is_array()) fail(join(path, "controls"), "expected a list of control indices");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const long long c = integer(arr[i], at(join(path, "controls"), i));
        if (c < 0 || c >= problem.num_controls()) fail(at(join(path, "controls"), i), "control index out of range");
        s.controls.push_back(static_cast<int>(c));
        controls.push_back(c);
      }
    }
    out["controls"] = controls;
    Json sh;
    s.shaping = shaping_value(field(j, "shaping", path), m, join(path, "shaping"), ctx, sh);
    out["shaping"] = sh;
    s.delta = nonneg(j, "delta", path, out);
    return s;
  }
  if (type == "multiplicative_ctrl") {
    check_keys(j, path, {"type", "channels", "shaping", "delta"}, ctx);
    MultiplicativeCtrlSpec s;
    Json channels = Json::array();
    if (j.contains("channels")) {
      const Json& arr = j.at("channels");
      if (!arr.is_array()) fail(join(path, "channels"), "expected a list of channels");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string cp = at(join(path, "channels"), i);
        if (!arr[i].is_array() || arr[i].empty()) fail(cp, "expected a nonempty list of {control, operator} terms");
        ControlChannel ch;
        for (std::size_t k = 0; k < arr[i].size(); ++k) {
          const std::string tp = at(cp, k);
          const Json& term = require_object(arr[i][k], tp);
          check_keys(term, tp, {"control", "operator"}, ctx);
          const long long c = integer(field(term, "control", tp), join(tp, "control"));
          if (c < 0 || c >= problem.num_controls()) fail(join(tp, "control"), "control index out of range");
          ch.terms.emplace_back(static_cast<int>(c), hermitian_operator(field(term, "operator", tp), n, join(tp, "operator"), ctx));
        }
        s.channels.push_back(std::move(ch));
      }
      channels = arr;
    }
    out["channels"] = channels;
    Json sh;
    s.shaping = shaping_value(field(j, "shaping", path), m, join(path, "shaping"), ctx, sh);
    out["shaping"] = sh;
    s.delta = nonneg(j, "delta", path, out);
    return s;
  }
  if (type == "actuator") {
    check_keys(j, path, {"type", "nominal_response", "weight_response", "delta"}, ctx);
    ActuatorSpec s;
    s.nominal_response = real_vector(field(j, "nominal_response", path), join(path, "nominal_response"));
    s.weight_response = real_vector(field(j, "weight_response", path), join(path, "weight_response"));
    if (s.nominal_response.size() != m) fail(join(path, "nominal_response"), "expected M entries");
    if (s.weight_response.size() != m) fail(join(path, "weight_response"), "expected M entries");
    out["nominal_response"] = j.at("nominal_response");
    out["weight_response"] = j.at("weight_response");
    s.delta = nonneg(j, "delta", path, out);
    return s;
  }
  if (type == "cross_coupling") {
    check_keys(j, path, {"type", "dims", "local1", "local2", "interaction", "delta1", "delta2", "delta_int", "norm",
                         "combine"}, ctx);
    CrossCouplingSpec s;
    const Json& dims = field(j, "dims", path);
    if (!dims.is_array() || dims.size() != 2) fail(join(path, "dims"), "expected [n1, n2]");
    s.dim1 = integer(dims[0], join(path, "dims") + "[0]");
    s.dim2 = integer(dims[1], join(path, "dims") + "[1]");
    if (s.dim1 < 1 || s.dim2 < 1 || s.dim1 * s.dim2 != n) fail(join(path, "dims"), "n1 n2 must equal the system dimension");
    out["dims"] = dims;
    s.local1 = hermitian_operator(field(j, "local1", path), s.dim1, join(path, "local1"), ctx);
    s.local2 = hermitian_operator(field(j, "local2", path), s.dim2, join(path, "local2"), ctx);
    s.interaction = hermitian_operator(field(j, "interaction", path), n, join(path, "interaction"), ctx);
    out["local1"] = j.at("local1");
    out["local2"] = j.at("local2");
    out["interaction"] = j.at("interaction");
    s.delta1 = nonneg(j, "delta1", path, out);
    s.delta2 = nonneg(j, "delta2", path, out);
    s.delta_int = nonneg(j, "delta_int", path, out);
    s.norm = norm_value(j, "norm", NormKind::two, path, out);
    const std::string comb = opt_text(j, "combine", "max", path);
    if (comb != "max" && comb != "sum") fail(join(path, "combine"), "expected max or sum");
    s.combine = combine_from_string(comb);
    out["combine"] = comb;
    return s;
  }
  if (type == "lindblad") {
    check_keys(j, path, {"type", "jumps", "delta", "norm"}, ctx);
    LindbladSpec s;
    const Json& arr = field(j, "jumps", path);
    if (!arr.is_array() || arr.empty()) fail(join(path, "jumps"), "expected a nonempty list of jump operators");
    if (n > kMaxLiftedDim) fail(path, "lindblad measure limited to n <= " + std::to_string(kMaxLiftedDim));
    for (std::size_t i = 0; i < arr.size(); ++i) s.jumps.push_back(operator_value(arr[i], n, at(join(path, "jumps"), i), ctx));
    out["jumps"] = arr;
    s.delta = nonneg(j, "delta", path, out);
    s.norm = norm_value(j, "norm", NormKind::two, path, out);
    return s;
  }
  if (type == "bipartite") {
    check_keys(j, path, {"type", "bath_dim", "bath_hamiltonians", "couplings", "delta"}, ctx);
    BipartiteSpec s;
    s.bath_dim = integer(field(j, "bath_dim", path), join(path, "bath_dim"));
    if (s.bath_dim < 1) fail(join(path, "bath_dim"), "must be positive");
    out["bath_dim"] = s.bath_dim;
    const Json& hb = field(j, "bath_hamiltonians", path);
    const Json& hc = field(j, "couplings", path);
    if (!hb.is_array() || !hc.is_array() || hb.size() != hc.size() || hb.empty()) {
      fail(path, "bath_hamiltonians and couplings must be nonempty lists of equal length");
    }
    for (std::size_t i = 0; i < hb.size(); ++i) {
      s.bath_hamiltonians.push_back(hermitian_operator(hb[i], s.bath_dim, at(join(path, "bath_hamiltonians"), i), ctx));
      s.couplings.push_back(hermitian_operator(hc[i], n * s.bath_dim, at(join(path, "couplings"), i), ctx));
    }
    out["bath_hamiltonians"] = hb;
    out["couplings"] = hc;
    s.delta = nonneg(j, "delta", path, out, 1.0);
    return s;
  }
  fail(join(path, "type"), "unknown uncertainty type \"" + type + "\"");
}

inline std::vector<UncertaintySpec> uncertainty_list(const Json& j, const ControlProblem& problem,
                                                     const std::string& path, const Context& ctx, Json& out) {
  if (!j.is_array()) fail(path, "expected a list of uncertainty descriptions");
  std::vector<UncertaintySpec> specs;
  out = Json::array();
  for (std::size_t i = 0; i < j.size(); ++i) {
    Json norm;
    specs.push_back(uncertainty_value(j[i], problem, at(path, i), ctx, norm));
    out.push_back(norm);
  }
  return specs;
}

inline std::string line_column(const std::string& textin, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < textin.size(); ++i) {
    if (textin[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace detail

inline RVector ProblemFile::initial_controls() const {
  const ControlProblem& p = *problem;
  if (initial.values) return *initial.values;
  RVector v = RVector::Constant(p.num_variables(), initial.constant);
  if (initial.noise > 0.0) {
    std::mt19937_64 rng(initial.seed);
    std::normal_distribution<double> nd(0.0, initial.noise);
    for (Eigen::Index k = 0; k < v.size(); ++k) v(k) += nd(rng);
  }
  return clip_to_bounds(p, v);
}

/// Builds every runtime object from a parsed document; throws ProblemError
/// with the offending field path.
inline ProblemFile parse_problem(const Json& doc, bool strict = true) {
  using namespace detail;
  ProblemFile pf;
  Context ctx{strict, &pf.warnings};
  require_object(doc, "");
  check_keys(doc, "", {"system", "target", "initial_controls", "uncertainty", "combine", "smoothing", "optimizer",
                       "evaluation"}, ctx);
  Json& out = pf.document;
  out = Json::object();

  // system
  const Json& sys = require_object(field(doc, "system", ""), "system");
  check_keys(sys, "system", {"dim", "horizon", "pulses", "samples", "drift", "controls", "bounds", "actuator"}, ctx);
  Json nsys = Json::object();
  const long long n = integer(field(sys, "dim", "system"), "system.dim");
  if (n < 1) fail("system.dim", "must be positive");
  nsys["dim"] = n;
  const double horizon = number(field(sys, "horizon", "system"), "system.horizon");
  if (!(horizon > 0.0)) fail("system.horizon", "must be positive");
  nsys["horizon"] = horizon;
  const long long pulses = integer(field(sys, "pulses", "system"), "system.pulses");
  if (pulses < 1) fail("system.pulses", "must be positive");
  nsys["pulses"] = pulses;
  const long long samples = opt_integer(sys, "samples", pulses, "system");
  if (samples < 1 || samples % pulses != 0) fail("system.samples", "M must be a positive multiple of N");
  nsys["samples"] = samples;
  const CMatrix drift = sys.contains("drift") ? hermitian_operator(sys.at("drift"), n, "system.drift", ctx)
                                              : CMatrix(CMatrix::Zero(n, n));
  if (sys.contains("drift")) {
    nsys["drift"] = sys.at("drift");
  } else {
    Json zero = Json::array();
    for (long long r = 0; r < n; ++r) {
      Json row = Json::array();
      for (long long c = 0; c < n; ++c) row.push_back(Json::array({0.0, 0.0}));
      zero.push_back(row);
    }
    nsys["drift"] = Json{{"matrix", zero}};
  }
  std::vector<CMatrix> controls;
  const Json& cj = field(sys, "controls", "system");
  if (!cj.is_array()) fail("system.controls", "expected a list of operators");
  for (std::size_t i = 0; i < cj.size(); ++i) controls.push_back(hermitian_operator(cj[i], n, at("system.controls", i), ctx));
  nsys["controls"] = cj;
  std::optional<ControlBounds> bounds;
  if (sys.contains("bounds") && !sys.at("bounds").is_null()) {
    const Json& b = require_object(sys.at("bounds"), "system.bounds");
    check_keys(b, "system.bounds", {"lower", "upper"}, ctx);
    bounds = ControlBounds{number(field(b, "lower", "system.bounds"), "system.bounds.lower"),
                           number(field(b, "upper", "system.bounds"), "system.bounds.upper")};
    if (!(bounds->lower <= bounds->upper)) fail("system.bounds", "lower must not exceed upper");
    nsys["bounds"] = Json{{"lower", bounds->lower}, {"upper", bounds->upper}};
  } else {
    nsys["bounds"] = nullptr;
  }
  std::optional<RVector> actuator;
  if (sys.contains("actuator") && !sys.at("actuator").is_null()) {
    actuator = real_vector(sys.at("actuator"), "system.actuator");
    if (actuator->size() != samples) fail("system.actuator", "impulse response must have M entries");
    nsys["actuator"] = sys.at("actuator");
  } else {
    nsys["actuator"] = nullptr;
  }
  out["system"] = nsys;

  const CMatrix target = target_value(field(doc, "target", ""), n, "target", ctx);
  out["target"] = doc.at("target");
  try {
    pf.problem.emplace(drift, controls, target, horizon, static_cast<int>(pulses), static_cast<int>(samples), bounds,
                       actuator);
  } catch (const std::exception& e) {
    fail("system", e.what());
  }
  const ControlProblem& problem = *pf.problem;

  // initial controls
  Json ninit = Json::object();
  if (doc.contains("initial_controls")) {
    const Json& ic = require_object(doc.at("initial_controls"), "initial_controls");
    check_keys(ic, "initial_controls", {"constant", "noise", "seed", "values"}, ctx);
    if (ic.contains("values")) {
      if (ic.contains("constant") || ic.contains("noise")) fail("initial_controls", "give either values or constant/noise");
      RVector v = real_vector(ic.at("values"), "initial_controls.values");
      if (v.size() != problem.num_variables()) {
        fail("initial_controls.values", "expected m N = " + std::to_string(problem.num_variables()) + " amplitudes");
      }
      try {
        validate_controls(problem, v);
      } catch (const std::exception& e) {
        fail("initial_controls.values", e.what());
      }
      pf.initial.values = v;
      ninit["values"] = ic.at("values");
    } else {
      pf.initial.constant = opt_number(ic, "constant", 0.0, "initial_controls");
      pf.initial.noise = opt_number(ic, "noise", 0.0, "initial_controls");
      if (pf.initial.noise < 0.0) fail("initial_controls.noise", "must be nonnegative");
      const long long seed = opt_integer(ic, "seed", 0, "initial_controls");
      if (seed < 0) fail("initial_controls.seed", "must be nonnegative");
      pf.initial.seed = static_cast<std::uint64_t>(seed);
      ninit["constant"] = pf.initial.constant;
      ninit["noise"] = pf.initial.noise;
      ninit["seed"] = seed;
    }
  } else {
    ninit["constant"] = 0.0;
    ninit["noise"] = 0.0;
    ninit["seed"] = 0;
  }
  out["initial_controls"] = ninit;

  // uncertainty model
  Json nunc = Json::array();
  if (doc.contains("uncertainty")) {
    pf.model.terms = uncertainty_list(doc.at("uncertainty"), problem, "uncertainty", ctx, nunc);
  }
  out["uncertainty"] = nunc;
  const std::string comb = opt_text(doc, "combine", "sum", "");
  try {
    pf.model.combine = combine_from_string(comb);
  } catch (const std::exception& e) {
    fail("combine", e.what());
  }
  out["combine"] = comb;
  if (doc.contains("smoothing") && !doc.at("smoothing").is_null()) {
    const double tau = number(doc.at("smoothing"), "smoothing");
    if (!(tau > 0.0)) fail("smoothing", "temperature must be positive");
    pf.model.lse_temperature = tau;
    out["smoothing"] = tau;
  } else {
    out["smoothing"] = nullptr;
  }
  if (pf.model.combine == Combine::stack) {
    try {
      robustness_value(pf.model, problem, pf.initial_controls());
    } catch (const std::exception& e) {
      fail("combine", e.what());
    }
  }

  // optimizer
  Json nopt = Json::object();
  OptimizerConfig& oc = pf.optimizer;
  if (doc.contains("optimizer")) {
    const Json& o = require_object(doc.at("optimizer"), "optimizer");
    check_keys(o, "optimizer", {"f0", "schedule", "alpha", "beta", "max_iters_stage1", "max_iters_stage2", "stop_tol",
                                "stop_window", "ridge", "bracket_growth", "slack_factor", "max_retries"}, ctx);
    oc.f0 = opt_number(o, "f0", oc.f0, "optimizer");
    if (o.contains("schedule")) {
      const Json& s = o.at("schedule");
      if (!s.is_array()) fail("optimizer.schedule", "expected a list of {f0, after} levels");
      for (std::size_t i = 0; i < s.size(); ++i) {
        const std::string lp = at("optimizer.schedule", i);
        const Json& lv = require_object(s[i], lp);
        check_keys(lv, lp, {"f0", "after"}, ctx);
        ThresholdLevel level;
        level.f0 = number(field(lv, "f0", lp), join(lp, "f0"));
        if (lv.contains("after") && !lv.at("after").is_null()) {
          const long long a = integer(lv.at("after"), join(lp, "after"));
          if (a < 0) fail(join(lp, "after"), "must be nonnegative");
          level.after = static_cast<int>(a);
        }
        oc.schedule.push_back(level);
      }
    }
    oc.alpha = opt_number(o, "alpha", oc.alpha, "optimizer");
    oc.beta = opt_number(o, "beta", oc.beta, "optimizer");
    oc.max_iters_stage1 = static_cast<int>(opt_integer(o, "max_iters_stage1", oc.max_iters_stage1, "optimizer"));
    oc.max_iters_stage2 = static_cast<int>(opt_integer(o, "max_iters_stage2", oc.max_iters_stage2, "optimizer"));
    oc.stop_tol = opt_number(o, "stop_tol", oc.stop_tol, "optimizer");
    oc.stop_window = static_cast<int>(opt_integer(o, "stop_window", oc.stop_window, "optimizer"));
    oc.ridge = opt_number(o, "ridge", oc.ridge, "optimizer");
    oc.bracket_growth = opt_number(o, "bracket_growth", oc.bracket_growth, "optimizer");
    oc.slack_factor = opt_number(o, "slack_factor", oc.slack_factor, "optimizer");
    oc.max_retries = static_cast<int>(opt_integer(o, "max_retries", oc.max_retries, "optimizer"));
  }
  try {
    oc.validate();
  } catch (const std::exception& e) {
    fail("optimizer", e.what());
  }
  nopt["f0"] = oc.f0;
  Json sched = Json::array();
  for (const auto& l : oc.schedule) {
    Json lv = Json::object();
    lv["f0"] = l.f0;
    lv["after"] = l.after ? Json(*l.after) : Json(nullptr);
    sched.push_back(lv);
  }
  nopt["schedule"] = sched;
  nopt["alpha"] = oc.alpha;
  nopt["beta"] = oc.beta;
  nopt["max_iters_stage1"] = oc.max_iters_stage1;
  nopt["max_iters_stage2"] = oc.max_iters_stage2;
  nopt["stop_tol"] = oc.stop_tol;
  nopt["stop_window"] = oc.stop_window;
  nopt["ridge"] = oc.ridge;
  nopt["bracket_growth"] = oc.bracket_growth;
  nopt["slack_factor"] = oc.slack_factor;
  nopt["max_retries"] = oc.max_retries;
  out["optimizer"] = nopt;

  // evaluation
  Json neval = Json::object();
  EvaluationConfig& ev = pf.evaluation;
  Json neval_unc = Json::array();
  if (doc.contains("evaluation")) {
    const Json& e = require_object(doc.at("evaluation"), "evaluation");
    check_keys(e, "evaluation", {"magnitudes", "samples", "seed", "mode", "uncertainty", "check_samples"}, ctx);
    if (e.contains("magnitudes")) {
      const RVector mags = real_vector(e.at("magnitudes"), "evaluation.magnitudes");
      if (mags.size() == 0) fail("evaluation.magnitudes", "expected at least one magnitude");
      ev.magnitudes.assign(mags.data(), mags.data() + mags.size());
      std::sort(ev.magnitudes.begin(), ev.magnitudes.end());
    }
    ev.samples = static_cast<int>(opt_integer(e, "samples", ev.samples, "evaluation"));
    if (ev.samples < 1) fail("evaluation.samples", "must be positive");
    const long long seed = opt_integer(e, "seed", 0, "evaluation");
    if (seed < 0) fail("evaluation.seed", "must be nonnegative");
    ev.seed = static_cast<std::uint64_t>(seed);
    const std::string mode = opt_text(e, "mode", "random", "evaluation");
    if (mode == "random") ev.mode = SamplingMode::random;
    else if (mode == "fixed") ev.mode = SamplingMode::fixed;
    else fail("evaluation.mode", "expected random or fixed");
    if (e.contains("uncertainty")) {
      ev.uncertainty = uncertainty_list(e.at("uncertainty"), problem, "evaluation.uncertainty", ctx, neval_unc);
    }
    ev.check_samples = static_cast<int>(opt_integer(e, "check_samples", ev.check_samples, "evaluation"));
    if (ev.check_samples < 1) fail("evaluation.check_samples", "must be positive");
  }
  neval["magnitudes"] = ev.magnitudes;
  neval["samples"] = ev.samples;
  neval["seed"] = ev.seed;
  neval["mode"] = ev.mode == SamplingMode::random ? "random" : "fixed";
  neval["uncertainty"] = neval_unc;
  neval["check_samples"] = ev.check_samples;
  out["evaluation"] = neval;
  return pf;
}

inline Json parse_json_text(const std::string& textin, const std::string& source = "problem") {
  try {
    return Json::parse(textin);
  } catch (const nlohmann::json::parse_error& e) {
    throw ProblemError(source + ": " + detail::line_column(textin, e.byte > 0 ? e.byte - 1 : 0) + ": " +
                       "malformed JSON (" + std::string(e.what()) + ")");
  }
}

inline ProblemFile parse_problem_text(const std::string& textin, bool strict = true,
                                      const std::string& source = "problem") {
  const Json doc = parse_json_text(textin, source);
  try {
    return parse_problem(doc, strict);
  } catch (const ProblemError& e) {
    throw ProblemError(source + ": " + e.what());
  }
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ProblemError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline ProblemFile load_problem(const std::string& path, bool strict = true) {
  return parse_problem_text(read_text_file(path), strict, path);
}

/// Normalized document, two-space indented, trailing newline.
inline std::string serialize_problem(const ProblemFile& pf) { return pf.document.dump(2) + "\n"; }

}  // namespace robustpulse::cli
