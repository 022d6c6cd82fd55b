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

#ifndef CHANPLAN_PLANNER_HPP
#define CHANPLAN_PLANNER_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "chanplan/activation_store.hpp"
#include "chanplan/hsic.hpp"
#include "chanplan/importance.hpp"
#include "chanplan/net_model.hpp"
#include "chanplan/qcqp_solver.hpp"

namespace chanplan {

inline constexpr std::string_view kVersion = "1.0.0";
inline constexpr int kPlanFormatVersion = 1;
inline constexpr std::int64_t kDefaultSamples = 64;

struct PlanSettings {
  BudgetKind budget_kind = BudgetKind::Flops;
  /// Exactly one of the two must be set: a fraction of the unpruned cost or
  /// an absolute ceiling.
  std::optional<double> budget_ratio;
  std::optional<double> budget_abs;
  double beta = 1.0;
  /// Unset: min(64, samples in the dump).
  std::optional<std::int64_t> samples;
  KernelSpec kernel = KernelSpec::linear();
  Pooling pooling = Pooling::Flatten;
  double alpha_min = 0.05;
  std::int64_t divisor = 1;
  unsigned threads = 0;
};

struct LayerPlan {
  std::string name;
  int group = 0;
  std::int64_t original = 0;
  std::int64_t kept = 0;
  double ratio = 1.0;
  double importance = 1.0;
  bool degenerate = false;

  bool operator==(const LayerPlan&) const = default;
};

struct PruningPlan {
  std::map<int, double> ratios;  // prunable group -> continuous ratio
  std::vector<LayerPlan> layers;  // topology order
  double achieved_cost = 0.0;
  double budget = 0.0;
  double full_cost = 0.0;
  BudgetKind budget_kind = BudgetKind::Flops;
  double beta = 1.0;
  std::int64_t n_samples = 0;
  std::string kernel = "linear";
  Pooling pooling = Pooling::Flatten;
  double alpha_min = 0.05;
  std::int64_t divisor = 1;
  std::string solver_status = "optimal";
  std::vector<std::string> diagnostics;

  std::map<std::string, std::int64_t> channels() const;
  bool operator==(const PruningPlan&) const = default;
};

/// Rounds continuous group ratios to channel counts that are multiples of
/// `divisor`, then removes `divisor` channels at a time from the group that
/// loses the least importance per unit of cost saved until the exact recount
/// fits the budget. Non-prunable layers keep their width.
std::map<std::string, std::int64_t> round_and_repair(
    const Eigen::Ref<const Eigen::VectorXd>& alpha,
    const Eigen::Ref<const Eigen::VectorXd>& group_importance,
    const NetworkDescription& net, BudgetKind kind, double budget,
    std::int64_t divisor);

/// Independence matrix, importance, solve, rounding and repair.
PruningPlan plan(const ActivationDump& dump, const NetworkDescription& net,
                 const PlanSettings& settings);

PruningPlan plan(const std::filesystem::path& manifest,
                 const std::filesystem::path& topology,
                 const PlanSettings& settings);

enum class ReportFormat { Json, Text, Csv };
ReportFormat parse_report_format(std::string_view text);

std::string plan_to_json(const PruningPlan& plan);
PruningPlan plan_from_json(std::string_view text);
std::string render_plan(const PruningPlan& plan, ReportFormat format);

struct VerifyCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  std::vector<std::string> diagnostics;

  bool passed() const noexcept;
  std::string render() const;
};

/// Re-checks the invariances the importance scores rely on (scale,
/// orthogonal, Gaussian mutual-information agreement) on the dump's own
/// activations and on synthetic controls.
VerifyReport verify(const ActivationDump& dump,
                    Pooling pooling = Pooling::Flatten, unsigned threads = 0);
VerifyReport verify(const std::filesystem::path& manifest,
                    Pooling pooling = Pooling::Flatten, unsigned threads = 0);

}  // namespace chanplan

#endif  // CHANPLAN_PLANNER_HPP
