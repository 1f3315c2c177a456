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

// optimizer.hpp: two-stage synthesis. Stage 1 climbs the nominal fidelity to
// the threshold f0; Stage 2 lowers the robustness measure while holding the
// fidelity, one dual-solved quadratic step at a time.

#pragma once

#include "robustpulse/differentiation.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace robustpulse {

/// One threshold level. With `after` set the level activates once that many
/// iterations have run; otherwise it activates when the previous level has
/// converged.
struct ThresholdLevel {
  double f0 = 1.0 - 1e-6;
  std::optional<int> after;
};

struct OptimizerConfig {
  double f0 = 1.0 - 1e-6;
  std::vector<ThresholdLevel> schedule;  // later levels, applied in order
  double alpha = 5.0;
  double beta = 1.0;
  int max_iters_stage1 = 2000;
  int max_iters_stage2 = 1000;
  double stop_tol = 1e-5;  // relative change of J over the window
  int stop_window = 10;
  double ridge = 1e-10;
  double bracket_growth = 10.0;
  double lambda_max = 1e12;
  double slack_factor = 10.0;
  int max_retries = 10;
  double min_step = 1e-14;
  unsigned threads = 1;

  void validate() const {
    auto check_f0 = [](double f) {
      if (!(f > 0.0 && f < 1.0)) throw DomainError("fidelity threshold f0 must lie in (0, 1)");
    };
    check_f0(f0);
    for (const auto& level : schedule) check_f0(level.f0);
    if (!(alpha > 0.0)) throw DomainError("alpha must be positive");
    if (!(beta > 0.0)) throw DomainError("beta must be positive");
    if (max_iters_stage1 < 0 || max_iters_stage2 < 0) throw DomainError("iteration limits must be nonnegative");
    if (!(ridge > 0.0)) throw DomainError("ridge must be positive");
    if (!(bracket_growth > 1.0)) throw DomainError("bracket growth must exceed 1");
    if (stop_window < 1) throw DomainError("stop window must be positive");
  }

  double slack(double threshold) const { return slack_factor * (1.0 - threshold); }
};

struct TraceRow {
  int iter = 0;
  int stage = 1;
  double fidelity = 0.0;
  double robustness = 0.0;
  double step_norm = 0.0;
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double f0 = 0.0;
};

struct OptimizationTrace {
  std::vector<TraceRow> rows;

  /// First iteration that ran in Stage 2, if any.
  std::optional<int> switch_iteration() const {
    for (const auto& r : rows)
      if (r.stage == 2) return r.iter;
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Stage 1

struct Stage1Result {
  RVector v;
  double fidelity = 0.0;
  double step_norm = 0.0;
  bool stalled = false;
};

/// Projected gradient ascent on F with backtracking; the trial step starts
/// at length beta (or twice the last accepted length) and is halved until F
/// increases.
inline Stage1Result stage1_step(const ControlProblem& problem, const RVector& v, const OptimizerConfig& config,
                                double* step_hint = nullptr) {
  const double f = nominal_fidelity(propagate_nominal(problem, v), problem.target());
  const RVector g = fidelity_gradient(problem, v);
  const double gn = g.norm();
  if (!(gn > 0.0)) return {v, f, 0.0, false};
  double length = config.beta;
  if (step_hint && *step_hint > 0.0) length = std::min(config.beta, 2.0 * *step_hint);
  while (length >= config.min_step * std::max(1.0, v.norm())) {
    const RVector trial = clip_to_bounds(problem, v + (length / gn) * g);
    const double ft = nominal_fidelity(propagate_nominal(problem, trial), problem.target());
    if (ft > f) {
      if (step_hint) *step_hint = length;
      return {trial, ft, (trial - v).norm(), false};
    }
    length *= 0.5;
  }
  return {v, f, 0.0, true};
}

// ---------------------------------------------------------------------------
// Dual subproblem

struct DualSolution {
  double lambda = 0.0;
  double gamma = 0.0;
  RVector step;
  bool feasible = false;
};

namespace detail {

struct DualProblem {
  const RVector& grad_f;
  const RMatrix& hess_f;
  const RVector& grad_j;
  const RMatrix& hess_j;
  double slack;  // F_nom - f0
  double alpha;
  double ridge;

  RMatrix matrix(double lambda) const {
    return RMatrix::Identity(grad_f.size(), grad_f.size()) - lambda * hess_f + alpha * hess_j;
  }
  RVector q(double lambda) const { return alpha * grad_j - lambda * grad_f; }

  bool feasible(double lambda) const {
    if (grad_f.size() == 0) return true;
    RMatrix shifted = matrix(lambda);
    shifted.diagonal().array() -= ridge;
    Eigen::LLT<RMatrix> llt(shifted);
    return llt.info() == Eigen::Success;
  }

  /// gamma(lambda) and the minimizing step; -inf outside the feasible set.
  double gamma(double lambda, RVector* step = nullptr) const {
    if (!feasible(lambda)) return -std::numeric_limits<double>::infinity();
    const RVector qq = q(lambda);
    const RVector sol = matrix(lambda).ldlt().solve(qq);
    if (step) *step = -sol;
    return -2.0 * lambda * slack - qq.dot(sol);
  }
};

}  // namespace detail

/// Maximizes the concave dual gamma(lambda) over the feasible interval by
/// geometric bracket expansion and golden-section search; the step is
/// -M(lambda)^{-1} q(lambda).
inline DualSolution solve_dual(const RVector& grad_f, const RMatrix& hess_f, const RVector& grad_j,
                               const RMatrix& hess_j, double fidelity, double f0, double alpha, double ridge = 1e-10,
                               double growth = 10.0, double lambda_max = 1e12) {
  const Eigen::Index dim = grad_f.size();
  if (grad_j.size() != dim || hess_f.rows() != dim || hess_f.cols() != dim || hess_j.rows() != dim ||
      hess_j.cols() != dim) {
    throw DimensionError("solve_dual: inconsistent model dimensions");
  }
  if (!grad_f.allFinite() || !grad_j.allFinite() || !hess_f.allFinite() || !hess_j.allFinite() ||
      !std::isfinite(fidelity)) {
    throw DomainError("solve_dual: non-finite input");
  }
  const detail::DualProblem dp{grad_f, hess_f, grad_j, hess_j, fidelity - f0, alpha, ridge};

  // lower end of the feasible interval
  double lo = 0.0;
  if (!dp.feasible(0.0)) {
    double hi = 1.0;
    while (hi <= lambda_max && !dp.feasible(hi)) hi *= growth;
    if (hi > lambda_max) return {0.0, -std::numeric_limits<double>::infinity(), RVector::Zero(dim), false};
    double a = hi / growth < 1.0 ? 0.0 : hi / growth;
    for (int k = 0; k < 200 && hi - a > 1e-12 * hi; ++k) {
      const double mid = 0.5 * (a + hi);
      (dp.feasible(mid) ? hi : a) = mid;
    }
    lo = hi;
  }

  // expand to the right until gamma stops increasing or feasibility ends
  double prev = lo, right = lo + 1.0;
  double g_prev = dp.gamma(prev);
  double left = lo;
  while (right <= lambda_max) {
    const double g_right = dp.gamma(right);
    if (!(g_right > g_prev)) break;
    left = prev;
    prev = right;
    g_prev = g_right;
    right = lo + (right - lo) * growth;
  }
  if (right > lambda_max) {
    // gamma still increasing at the cap: the model constraint cannot be met
    return {prev, g_prev, RVector::Zero(dim), false};
  }
  if (!dp.feasible(right)) {
    // pull the right edge back onto the feasible boundary
    double a = prev, b = right;
    for (int k = 0; k < 200 && b - a > 1e-12 * std::max(1.0, b); ++k) {
      const double mid = 0.5 * (a + b);
      (dp.feasible(mid) ? a : b) = mid;
    }
    right = a;
  }

  // golden section on [left, right]
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = left, b = right;
  double c = b - inv_phi * (b - a), d = a + inv_phi * (b - a);
  double gc = dp.gamma(c), gd = dp.gamma(d);
  for (int k = 0; k < 500 && b - a > 1e-10 * std::max(1.0, std::abs(b)); ++k) {
    if (gc >= gd) {
      b = d;
      d = c;
      gd = gc;
      c = b - inv_phi * (b - a);
      gc = dp.gamma(c);
    } else {
      a = c;
      c = d;
      gc = gd;
      d = a + inv_phi * (b - a);
      gd = dp.gamma(d);
    }
  }
  double best = gc >= gd ? c : d;
  double g_best = std::max(gc, gd);
  for (double cand : {lo, left, a, b}) {
    const double gv = dp.gamma(cand);
    if (gv >= g_best) {
      g_best = gv;
      best = cand;
    }
  }
  DualSolution out;
  out.lambda = best;
  out.gamma = dp.gamma(best, &out.step);
  out.feasible = std::isfinite(out.gamma);
  return out;
}

/// v^T (I + alpha H_J) v + 2 alpha g_J^T v
inline double dual_primal_objective(const RVector& step, const RVector& grad_j, const RMatrix& hess_j, double alpha) {
  return step.squaredNorm() + alpha * step.dot(hess_j * step) + 2.0 * alpha * grad_j.dot(step);
}

// ---------------------------------------------------------------------------
// Stage 2

struct Stage2Result {
  RVector v;
  double fidelity = 0.0;
  double robustness = 0.0;
  double step_norm = 0.0;
  double lambda = 0.0;
  double gamma = 0.0;
  int retries = 0;
  bool stalled = false;
  bool infeasible = false;
  bool clipped_hessian = false;
};

/// One quadratic-model step on the level set F >= f0. The step is halved
/// while the true fidelity falls more than the slack below f0.
inline Stage2Result stage2_step(const ControlProblem& problem, const RVector& v, const RobustnessModel& model,
                                const OptimizerConfig& config, double threshold) {
  const QuadraticModel fm = fidelity_model(problem, v, config.threads);
  const QuadraticModel jm = robustness_quadratic(model, problem, v, config.threads);
  DualSolution dual = solve_dual(fm.gradient, fm.hessian, jm.gradient, jm.hessian, fm.value, threshold,
                                 config.alpha, config.ridge, config.bracket_growth, config.lambda_max);
  bool clipped = false;
  if (!dual.feasible && fm.value >= threshold) {
    // an indefinite finite-difference Hessian of J can empty the feasible
    // set; retry with its positive semidefinite part
    dual = solve_dual(fm.gradient, fm.hessian, jm.gradient, linalg::psd_part(jm.hessian), fm.value, threshold,
                      config.alpha, config.ridge, config.bracket_growth, config.lambda_max);
    clipped = true;
  }
  Stage2Result out{v, fm.value, jm.value, 0.0, dual.lambda, dual.gamma};
  out.clipped_hessian = clipped;
  if (!dual.feasible) {
    out.stalled = out.infeasible = true;
    return out;
  }
  RVector step = dual.step;
  if (!(step.norm() > 0.0)) return out;
  for (int attempt = 0; attempt <= config.max_retries; ++attempt) {
    const RVector trial = clip_to_bounds(problem, v + step);
    const double ft = nominal_fidelity(propagate_nominal(problem, trial), problem.target());
    if (ft >= threshold - config.slack(threshold)) {
      out.v = trial;
      out.fidelity = ft;
      out.robustness = robustness_value(model, problem, trial);
      out.step_norm = (trial - v).norm();
      out.retries = attempt;
      return out;
    }
    step *= 0.5;
  }
  out.retries = config.max_retries;
  out.stalled = true;
  return out;
}

// ---------------------------------------------------------------------------
// Driver

enum class RunStatus { converged, max_iterations, stalled, threshold_not_met };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::converged: return "converged";
    case RunStatus::max_iterations: return "max_iterations";
    case RunStatus::stalled: return "stalled";
    case RunStatus::threshold_not_met: return "threshold_not_met";
  }
  return "?";
}

struct RunResult {
  RVector v;
  RVector v_switch;  // controls when Stage 2 first engaged (or final if never)
  OptimizationTrace trace;
  RunStatus status = RunStatus::max_iterations;
  double fidelity = 0.0;
  double robustness = 0.0;
  double final_f0 = 0.0;
  std::vector<std::string> warnings;
};

using TraceSink = std::function<void(const TraceRow&)>;

/// Alternates the stages by the threshold rule until the robustness measure
/// stops changing at the last threshold level, an iteration limit is hit, or
/// a stage stalls.
inline RunResult run_two_stage(const ControlProblem& problem, const RobustnessModel& model,
                               const OptimizerConfig& config, const RVector& v_init, const TraceSink& sink = {}) {
  config.validate();
  validate_controls(problem, v_init);
  RunResult out;
  out.v = v_init;
  std::vector<ThresholdLevel> levels{{config.f0, std::nullopt}};
  levels.insert(levels.end(), config.schedule.begin(), config.schedule.end());
  std::size_t level = 0;

  double fid = nominal_fidelity(propagate_nominal(problem, out.v), problem.target());
  double rob = robustness_value(model, problem, out.v);
  int stage1_iters = 0, stage2_iters = 0, iter = 0;
  std::vector<double> window;  // J after each Stage-2 iteration at the current level
  double step_hint = 0.0;
  bool switched = false;
  bool in_stage2 = false;
  if (model.empty()) out.warnings.push_back("no uncertainty terms: Stage 2 is a no-op");

  auto emit = [&](TraceRow row) {
    out.trace.rows.push_back(row);
    if (sink) sink(row);
  };

  for (;;) {
    // timed schedule entries
    while (level + 1 < levels.size() && levels[level + 1].after && iter >= *levels[level + 1].after) {
      ++level;
      window.clear();
    }
    const double threshold = levels[level].f0;
    ++iter;
    // Stage 2 keeps control while the fidelity stays within the slack band
    // below the threshold; the dual step then also restores fidelity.
    const bool climb = in_stage2 ? fid < threshold - config.slack(threshold) : fid < threshold;
    if (climb) {
      in_stage2 = false;
      if (stage1_iters >= config.max_iters_stage1) {
        out.status = RunStatus::threshold_not_met;
        break;
      }
      ++stage1_iters;
      const Stage1Result s1 = stage1_step(problem, out.v, config, &step_hint);
      out.v = s1.v;
      fid = s1.fidelity;
      rob = robustness_value(model, problem, out.v);
      emit({iter, 1, fid, rob, s1.step_norm, std::numeric_limits<double>::quiet_NaN(),
            std::numeric_limits<double>::quiet_NaN(), threshold});
      if (s1.stalled || s1.step_norm == 0.0) {
        out.status = fid >= threshold ? RunStatus::converged : RunStatus::stalled;
        if (fid < threshold) break;
      }
      continue;
    }
    in_stage2 = true;
    if (!switched) {
      switched = true;
      out.v_switch = out.v;
    }
    if (model.empty()) {
      --iter;
      out.status = RunStatus::converged;
      if (level + 1 < levels.size()) {
        ++level;
        continue;
      }
      break;
    }
    if (stage2_iters >= config.max_iters_stage2) {
      out.status = RunStatus::max_iterations;
      --iter;
      break;
    }
    ++stage2_iters;
    const Stage2Result s2 = stage2_step(problem, out.v, model, config, threshold);
    out.v = s2.v;
    fid = s2.fidelity;
    rob = s2.robustness;
    emit({iter, 2, fid, rob, s2.step_norm, s2.lambda, s2.gamma, threshold});
    if (s2.infeasible && fid < threshold) {
      in_stage2 = false;  // the level set is out of reach of the model; climb first
      continue;
    }
    if (s2.stalled) {
      out.warnings.push_back(s2.infeasible ? "dual subproblem infeasible at iteration " + std::to_string(iter)
                                           : "step retries exhausted at iteration " + std::to_string(iter));
      out.status = RunStatus::stalled;
      if (level + 1 < levels.size() && !levels[level + 1].after) {
        ++level;
        window.clear();
        continue;
      }
      break;
    }
    window.push_back(rob);
    const int w = config.stop_window;
    const bool flat = s2.step_norm == 0.0 ||
                      (static_cast<int>(window.size()) > w &&
                       std::abs(window.back() - window[window.size() - 1 - w]) <=
                           config.stop_tol * std::abs(window[window.size() - 1 - w]));
    if (flat) {
      out.status = RunStatus::converged;
      if (level + 1 < levels.size() && !levels[level + 1].after) {
        ++level;
        window.clear();
        continue;
      }
      if (level + 1 < levels.size()) continue;  // waiting for a timed level
      break;
    }
  }
  if (!switched) out.v_switch = out.v;
  out.fidelity = fid;
  out.robustness = rob;
  out.final_f0 = levels[level].f0;
  return out;
}

}  // namespace robustpulse
