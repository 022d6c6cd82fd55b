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

#ifndef CHANPLAN_QCQP_SOLVER_HPP
#define CHANPLAN_QCQP_SOLVER_HPP

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "chanplan/importance.hpp"
#include "chanplan/net_model.hpp"

namespace chanplan {

enum class SolverStatus { Optimal, MaxIter, InfeasibleBudget };

std::string_view to_string(SolverStatus status) noexcept;

struct SolverOptions {
  double alpha_min = 0.05;
  /// Relative width at which the multiplier bisection stops.
  double multiplier_tolerance = 1e-10;
  /// Coordinate sweeps stop once no entry moves by more than this.
  double sweep_tolerance = 1e-10;
  int max_sweeps = 100000;
};

struct SolverResult {
  Eigen::VectorXd alpha;
  double objective = 0.0;
  double constraint_value = 0.0;
  /// Largest violation of first-order optimality over the coordinates,
  /// minimized over the constraint multiplier.
  double kkt_residual = 0.0;
  double multiplier = 0.0;
  int iterations = 0;
  SolverStatus status = SolverStatus::Optimal;
};

/// Maximizes w^T a subject to [1 a]^T T [1 a] <= budget and
/// alpha_min <= a <= 1.
///
/// The multiplier of the single quadratic constraint is bisected; for each
/// trial multiplier the box-constrained Lagrangian is maximized by cyclic
/// coordinate ascent. Cost forms of plain chains have a zero diagonal, which
/// makes that Lagrangian multilinear and leaves a duality gap, so the dual
/// point is then polished by exact two-coordinate exchanges along the
/// constraint surface until no pair of groups can trade budget profitably.
/// Everything is deterministic.
SolverResult solve(const Eigen::Ref<const Eigen::VectorXd>& importance,
                   const Eigen::Ref<const Eigen::MatrixXd>& t, double budget,
                   const SolverOptions& options = {});

SolverResult solve(const Eigen::Ref<const Eigen::VectorXd>& importance,
                   const ConstraintForm& form, double budget,
                   const SolverOptions& options = {});

/// First-order optimality residual of `alpha`; writes the best multiplier to
/// `multiplier` when given.
double kkt_residual(const Eigen::Ref<const Eigen::VectorXd>& importance,
                    const Eigen::Ref<const Eigen::MatrixXd>& t,
                    const Eigen::Ref<const Eigen::VectorXd>& alpha,
                    double budget, double alpha_min,
                    double* multiplier = nullptr);

struct GroupImportance {
  Eigen::VectorXd values;
  std::vector<std::string> diagnostics;
};

/// Mean importance of each prunable group's members, skipping degenerate
/// layers. A group whose members are all degenerate gets 0.
GroupImportance importance_to_groups(const ImportanceVector& importance,
                                     const NetworkDescription& net);

}  // namespace chanplan

#endif  // CHANPLAN_QCQP_SOLVER_HPP
