// Copyright 2026 The chanplan Authors. All Rights Reserved.
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

#include "chanplan/qcqp_solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>

#include "chanplan/error.hpp"

namespace chanplan {

namespace {

constexpr double kFeasibilitySlack = 1e-12;
constexpr double kBoundTolerance = 1e-12;
// Up to this many groups every feasible box vertex also seeds the polish.
constexpr Eigen::Index kVertexStartGroups = 10;

// Real roots of a t^2 + b t + c = 0, using the cancellation-free form.
int quadratic_roots(double a, double b, double c, double roots[2]) {
  if (a == 0.0) {
    if (b == 0.0) return 0;
    roots[0] = -c / b;
    return 1;
  }
  double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) {
    if (disc < -1e-12 * std::max(b * b, std::abs(4.0 * a * c))) return 0;
    disc = 0.0;
  }
  const double q = -0.5 * (b + std::copysign(std::sqrt(disc), b));
  if (q == 0.0) {
    roots[0] = 0.0;
    return 1;
  }
  roots[0] = q / a;
  roots[1] = c / q;
  return 2;
}

/// Single-constraint QCQP over the augmented ratio vector (1, a_1..a_G).
class Problem {
 public:
  Problem(const Eigen::Ref<const Eigen::VectorXd>& weights,
          const Eigen::Ref<const Eigen::MatrixXd>& t, double budget,
          const SolverOptions& options)
      : w_(weights),
        t_(0.5 * (t + t.transpose())),
        budget_(budget),
        limit_(budget + kFeasibilitySlack * std::abs(budget)),
        lo_(options.alpha_min),
        options_(options),
        groups_(weights.size()) {
    weight_sum_ = w_.sum();
  }

  struct State {
    Eigen::VectorXd augmented;  // (1, alpha)
    Eigen::VectorXd slope;      // T * augmented
    double cost = 0.0;
  };

  State make_state(const Eigen::VectorXd& alpha) const {
    State state;
    state.augmented.resize(groups_ + 1);
    state.augmented << 1.0, alpha;
    refresh(state);
    return state;
  }

  void refresh(State& state) const {
    state.slope = t_ * state.augmented;
    state.cost = state.augmented.dot(state.slope);
  }

  void assign(State& state, Eigen::Index k, double value) const {
    const double delta = value - state.augmented(k);
    if (delta == 0.0) return;
    state.slope += t_.col(k) * delta;
    state.augmented(k) = value;
    state.cost = state.augmented.dot(state.slope);
  }

  double cost(const Eigen::VectorXd& alpha) const {
    return make_state(alpha).cost;
  }

  double objective(const State& state) const {
    return w_.dot(state.augmented.tail(groups_));
  }

  // Maximizes the Lagrangian w^T a - multiplier * cost(a) over the box by
  // cyclic coordinate ascent, always starting from the all-ones point.
  State lagrangian_argmax(double multiplier, int& sweeps) const {
    State state = make_state(Eigen::VectorXd::Ones(groups_));
    for (int sweep = 0; sweep < options_.max_sweeps; ++sweep) {
      ++sweeps;
      double largest_step = 0.0;
      for (Eigen::Index k = 1; k <= groups_; ++k) {
        const double current = state.augmented(k);
        const double curvature = t_(k, k);
        const double linear = state.slope(k) - curvature * current;
        const double weight = w_(k - 1);
        double next = current;
        if (curvature > 0.0) {
          next = (weight - 2.0 * multiplier * linear) /
                 (2.0 * multiplier * curvature);
          next = std::clamp(next, lo_, 1.0);
        } else {
          const double gradient = weight - 2.0 * multiplier * linear;
          if (gradient > 0.0) next = 1.0;
          if (gradient < 0.0) next = lo_;
        }
        largest_step = std::max(largest_step, std::abs(next - current));
        assign(state, k, next);
      }
      if (largest_step < options_.sweep_tolerance) break;
    }
    return state;
  }

  // Bisection on the constraint multiplier; returns the feasible side.
  State dual_point(int& sweeps, double& multiplier) const {
    const Eigen::VectorXd ones_slope =
        t_.bottomRows(groups_) * Eigen::VectorXd::Ones(groups_ + 1);
    double hi = w_.maxCoeff() / std::max(2.0 * ones_slope.maxCoeff(),
                                         std::numeric_limits<double>::min());
    if (!(hi > 0.0)) hi = 1.0;
    State feasible = lagrangian_argmax(hi, sweeps);
    for (int i = 0; i < 2000 && feasible.cost > limit_; ++i) {
      hi *= 2.0;
      feasible = lagrangian_argmax(hi, sweeps);
    }
    double lo = 0.0;
    while (hi - lo > options_.multiplier_tolerance * hi) {
      const double mid = 0.5 * (lo + hi);
      State trial = lagrangian_argmax(mid, sweeps);
      if (trial.cost <= limit_) {
        hi = mid;
        feasible = std::move(trial);
      } else {
        lo = mid;
      }
    }
    multiplier = hi;
    return feasible;
  }

  // Uniform ratio that spends the budget exactly.
  Eigen::VectorXd uniform_point() const {
    const double constant = t_(0, 0);
    const double linear = 2.0 * t_.row(0).tail(groups_).sum();
    const double quadratic = t_.bottomRightCorner(groups_, groups_).sum();
    const auto level =
        largest_feasible(quadratic, linear, constant, lo_, 1.0);
    return Eigen::VectorXd::Constant(groups_, level.value_or(lo_));
  }

  // Largest t in [lo, hi] with a t^2 + b t + c <= budget, for a function
  // nondecreasing on the interval.
  std::optional<double> largest_feasible(double a, double b, double c,
                                         double lo, double hi) const {
    auto value = [&](double x) { return (a * x + b) * x + c; };
    if (value(hi) <= limit_) return hi;
    if (value(lo) > limit_) return std::nullopt;
    double roots[2];
    const int count = quadratic_roots(a, b, c - budget_, roots);
    double best = lo;
    for (int i = 0; i < count; ++i) {
      if (roots[i] >= lo && roots[i] <= hi) best = std::max(best, roots[i]);
    }
    return best;
  }

  // Raises single coordinates while budget remains.
  bool fill(State& state) const {
    bool moved = false;
    for (Eigen::Index k = 1; k <= groups_; ++k) {
      const double current = state.augmented(k);
      if (w_(k - 1) <= 0.0 || current >= 1.0) continue;
      const double a = t_(k, k);
      const double r = state.slope(k) - a * current;
      const double base = state.cost - a * current * current - 2.0 * r * current;
      const auto next = largest_feasible(a, 2.0 * r, base, current, 1.0);
      if (next && *next > current + kBoundTolerance) {
        assign(state, k, *next);
        moved = true;
      }
    }
    return moved;
  }

  // Globally re-optimizes coordinates (g, h) with the others fixed.
  bool exchange(State& state, Eigen::Index g, Eigen::Index h) const {
    const double xg = state.augmented(g);
    const double xh = state.augmented(h);
    const double a = t_(g, g);
    const double b = t_(h, h);
    const double c = t_(g, h);
    const double rg = state.slope(g) - a * xg - c * xh;
    const double rh = state.slope(h) - c * xg - b * xh;
    const double base = state.cost -
                        (a * xg * xg + b * xh * xh + 2.0 * c * xg * xh +
                         2.0 * rg * xg + 2.0 * rh * xh);
    const double wg = w_(g - 1);
    const double wh = w_(h - 1);
    auto pair_cost = [&](double x, double y) {
      return a * x * x + b * y * y + 2.0 * c * x * y + 2.0 * rg * x +
             2.0 * rh * y + base;
    };

    double best_x = xg;
    double best_y = xh;
    double best_value = wg * xg + wh * xh;
    const double current_value = best_value;
    auto consider = [&](double x, double y) {
      if (!std::isfinite(x) || !std::isfinite(y)) return;
      x = std::clamp(x, lo_, 1.0);
      y = std::clamp(y, lo_, 1.0);
      if (pair_cost(x, y) > limit_) return;
      const double value = wg * x + wh * y;
      if (value > best_value) {
        best_value = value;
        best_x = x;
        best_y = y;
      }
    };

    consider(1.0, 1.0);
    for (double x : {lo_, 1.0}) {
      if (auto y = largest_feasible(b, 2.0 * (c * x + rh),
                                    a * x * x + 2.0 * rg * x + base, lo_, 1.0)) {
        consider(x, *y);
      }
    }
    for (double y : {lo_, 1.0}) {
      if (auto x = largest_feasible(a, 2.0 * (c * y + rg),
                                    b * y * y + 2.0 * rh * y + base, lo_, 1.0)) {
        consider(*x, y);
      }
    }
    // Interior points of the constraint curve where the objective is
    // tangent: w_g dQ/dy = w_h dQ/dx, a straight line in (x, y).
    const double la = wg * c - wh * a;
    const double lb = wg * b - wh * c;
    const double lc = wg * rh - wh * rg;
    double roots[2];
    if (std::abs(lb) >= std::abs(la) && lb != 0.0) {
      const double p = -la / lb;
      const double q0 = -lc / lb;
      const int count = quadratic_roots(
          a + b * p * p + 2.0 * c * p,
          2.0 * (b * p * q0 + c * q0 + rg + rh * p),
          b * q0 * q0 + 2.0 * rh * q0 + base - budget_, roots);
      for (int i = 0; i < count; ++i) consider(roots[i], p * roots[i] + q0);
    } else if (la != 0.0) {
      const double p = -lb / la;
      const double q0 = -lc / la;
      const int count = quadratic_roots(
          a * p * p + b + 2.0 * c * p,
          2.0 * (a * p * q0 + c * q0 + rg * p + rh),
          a * q0 * q0 + 2.0 * rg * q0 + base - budget_, roots);
      for (int i = 0; i < count; ++i) consider(p * roots[i] + q0, roots[i]);
    }

    if (best_value - current_value <= gain_tolerance()) return false;
    assign(state, g, best_x);
    assign(state, h, best_y);
    return true;
  }

  // Pairwise exchange until no single raise or pair trade gains anything.
  bool polish(State& state, int& sweeps) const {
    for (int sweep = 0; sweep < options_.max_sweeps; ++sweep) {
      ++sweeps;
      bool moved = fill(state);
      for (Eigen::Index g = 1; g <= groups_; ++g) {
        for (Eigen::Index h = g + 1; h <= groups_; ++h) {
          moved = exchange(state, g, h) || moved;
        }
      }
      refresh(state);
      if (!moved) return true;
    }
    return false;
  }

  double gain_tolerance() const {
    return 1e-14 * std::max(weight_sum_, std::numeric_limits<double>::min());
  }

  const Eigen::VectorXd& weights() const { return w_; }
  const Eigen::MatrixXd& form() const { return t_; }
  double budget() const { return budget_; }
  double limit() const { return limit_; }
  double alpha_min() const { return lo_; }
  Eigen::Index groups() const { return groups_; }

 private:
  Eigen::VectorXd w_;
  Eigen::MatrixXd t_;
  double budget_;
  double limit_;
  double lo_;
  SolverOptions options_;
  Eigen::Index groups_;
  double weight_sum_ = 0.0;
};

void validate(const Eigen::Ref<const Eigen::VectorXd>& importance,
              const Eigen::Ref<const Eigen::MatrixXd>& t, double budget,
              const SolverOptions& options) {
  if (t.rows() != t.cols() || t.rows() != importance.size() + 1) {
    throw Error(ErrorCode::DimensionMismatch,
                "cost form must be (G+1) x (G+1) for G importances");
  }
  if (importance.size() == 0) {
    throw Error(ErrorCode::InvalidArgument, "no groups to solve for");
  }
  if (!(options.alpha_min >= 0.0 && options.alpha_min < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "alpha_min must lie in [0, 1)");
  }
  if (!importance.allFinite() || (importance.array() < 0.0).any()) {
    throw Error(ErrorCode::InvalidArgument,
                "importances must be finite and nonnegative");
  }
  if (!t.allFinite() || (t.array() < 0.0).any()) {
    throw Error(ErrorCode::InvalidArgument,
                "cost form entries must be finite and nonnegative");
  }
  if (!std::isfinite(budget)) {
    throw Error(ErrorCode::InvalidArgument, "budget must be finite");
  }
}

SolverResult finish(const Problem& problem, const Problem::State& state,
                    int iterations, bool converged) {
  SolverResult result;
  result.alpha = state.augmented.tail(problem.groups());
  result.objective = problem.objective(state);
  result.constraint_value = state.cost;
  result.iterations = iterations;
  result.kkt_residual =
      kkt_residual(problem.weights(), problem.form(), result.alpha,
                   problem.budget(), problem.alpha_min(), &result.multiplier);
  const bool stationary =
      result.kkt_residual <= 1e-6 * problem.weights().norm();
  result.status = converged && stationary ? SolverStatus::Optimal
                                          : SolverStatus::MaxIter;
  return result;
}

}  // namespace

std::string_view to_string(SolverStatus status) noexcept {
  switch (status) {
    case SolverStatus::Optimal: return "optimal";
    case SolverStatus::MaxIter: return "max_iter";
    case SolverStatus::InfeasibleBudget: return "infeasible_budget";
  }
  return "optimal";
}

SolverResult solve(const Eigen::Ref<const Eigen::VectorXd>& importance,
                   const Eigen::Ref<const Eigen::MatrixXd>& t, double budget,
                   const SolverOptions& options) {
  validate(importance, t, budget, options);
  const Problem problem(importance, t, budget, options);
  const Eigen::Index groups = importance.size();

  Problem::State full = problem.make_state(Eigen::VectorXd::Ones(groups));
  if (full.cost <= budget) return finish(problem, full, 0, true);

  const Problem::State floor =
      problem.make_state(Eigen::VectorXd::Constant(groups, options.alpha_min));
  if (floor.cost > problem.limit()) {
    SolverResult result;
    result.alpha = floor.augmented.tail(groups);
    result.objective = problem.objective(floor);
    result.constraint_value = floor.cost;
    result.status = SolverStatus::InfeasibleBudget;
    return result;
  }

  int iterations = 0;
  double multiplier = 0.0;
  Problem::State best = problem.dual_point(iterations, multiplier);
  bool converged = problem.polish(best, iterations);

  auto try_start = [&](const Eigen::VectorXd& start) {
    Problem::State state = problem.make_state(start);
    if (state.cost > problem.limit()) return;
    const bool done = problem.polish(state, iterations);
    if (problem.objective(state) >
        problem.objective(best) + problem.gain_tolerance()) {
      best = std::move(state);
      converged = done;
    }
  };
  try_start(problem.uniform_point());
  // The surface is not convex in general, so small problems also start from
  // every vertex of the box; the optimum shares its bound pattern with one.
  if (groups <= kVertexStartGroups) {
    for (std::uint32_t mask = 0; mask < (1u << groups); ++mask) {
      Eigen::VectorXd vertex(groups);
      for (Eigen::Index g = 0; g < groups; ++g) {
        vertex(g) = (mask >> g) & 1u ? 1.0 : options.alpha_min;
      }
      try_start(vertex);
    }
  }
  return finish(problem, best, iterations, converged);
}

SolverResult solve(const Eigen::Ref<const Eigen::VectorXd>& importance,
                   const ConstraintForm& form, double budget,
                   const SolverOptions& options) {
  return solve(importance, form.t, budget, options);
}

double kkt_residual(const Eigen::Ref<const Eigen::VectorXd>& importance,
                    const Eigen::Ref<const Eigen::MatrixXd>& t,
                    const Eigen::Ref<const Eigen::VectorXd>& alpha,
                    double budget, double alpha_min, double* multiplier) {
  const Eigen::Index groups = alpha.size();
  if (importance.size() != groups || t.rows() != groups + 1 ||
      t.cols() != groups + 1) {
    throw Error(ErrorCode::DimensionMismatch, "KKT check dimensions");
  }
  const Eigen::MatrixXd sym = 0.5 * (t + t.transpose());
  Eigen::VectorXd augmented(groups + 1);
  augmented << 1.0, alpha;
  const Eigen::VectorXd slope = sym * augmented;
  const double cost = augmented.dot(slope);
  const Eigen::VectorXd gradient = 2.0 * slope.tail(groups);

  auto residual_at = [&](double mu) {
    double worst = 0.0;
    for (Eigen::Index g = 0; g < groups; ++g) {
      const double lagrangian = importance(g) - mu * gradient(g);
      const bool at_upper = alpha(g) >= 1.0 - kBoundTolerance;
      const bool at_lower = alpha(g) <= alpha_min + kBoundTolerance;
      double violation = std::abs(lagrangian);
      if (at_upper) violation = std::max(0.0, -lagrangian);
      if (at_lower) violation = std::max(0.0, lagrangian);
      if (at_upper && at_lower) violation = 0.0;
      worst = std::max(worst, violation);
    }
    return worst;
  };

  const bool active = budget - cost <= 1e-8 * std::max(std::abs(budget), 1.0);
  double best_mu = 0.0;
  double best = residual_at(0.0);
  if (active) {
    // The residual is convex and piecewise linear in mu; its minimum sits at
    // a breakpoint w_g / grad_g or where two pieces cross. Try breakpoints,
    // then refine by ternary search.
    double upper = 0.0;
    for (Eigen::Index g = 0; g < groups; ++g) {
      if (gradient(g) <= 0.0) continue;
      const double mu = importance(g) / gradient(g);
      upper = std::max(upper, mu);
      const double r = residual_at(mu);
      if (r < best) {
        best = r;
        best_mu = mu;
      }
    }
    double left = 0.0;
    double right = upper;
    for (int i = 0; i < 200 && right - left > 1e-15 * std::max(upper, 1e-300); ++i) {
      const double m1 = left + (right - left) / 3.0;
      const double m2 = right - (right - left) / 3.0;
      if (residual_at(m1) <= residual_at(m2)) {
        right = m2;
      } else {
        left = m1;
      }
    }
    const double mid = 0.5 * (left + right);
    if (residual_at(mid) < best) {
      best = residual_at(mid);
      best_mu = mid;
    }
  }
  if (multiplier != nullptr) *multiplier = best_mu;
  return best;
}

GroupImportance importance_to_groups(const ImportanceVector& importance,
                                     const NetworkDescription& net) {
  GroupImportance out;
  out.values = Eigen::VectorXd::Zero(
      static_cast<Eigen::Index>(net.group_count()));
  for (std::size_t p = 0; p < net.group_count(); ++p) {
    const int group = net.prunable_groups()[p];
    double sum = 0.0;
    int counted = 0;
    for (const auto& member : net.members(group)) {
      const auto it = std::find(importance.layer_names.begin(),
                                importance.layer_names.end(), member);
      if (it == importance.layer_names.end()) {
        throw Error(ErrorCode::UnmappedLayer,
                    "prunable layer '" + member + "' has no importance entry");
      }
      const auto index = it - importance.layer_names.begin();
      const bool flagged =
          static_cast<std::size_t>(index) < importance.degenerate.size() &&
          importance.degenerate[static_cast<std::size_t>(index)];
      if (flagged) continue;
      sum += importance.values(index);
      ++counted;
    }
    if (counted == 0) {
      out.diagnostics.push_back("group " + std::to_string(group) +
                                " has only degenerate layers; importance 0");
    } else {
      out.values(static_cast<Eigen::Index>(p)) = sum / counted;
    }
  }
  return out;
}

}  // namespace chanplan
