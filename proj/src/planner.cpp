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

#include "chanplan/planner.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "chanplan/error.hpp"
#include "json.hpp"

namespace chanplan {

namespace {

using nlohmann::json;

void check_settings(const PlanSettings& settings) {
  if (settings.budget_ratio.has_value() == settings.budget_abs.has_value()) {
    throw Error(ErrorCode::InvalidArgument,
                "give exactly one of a budget ratio or an absolute budget");
  }
  if (settings.budget_ratio &&
      !(*settings.budget_ratio > 0.0 && std::isfinite(*settings.budget_ratio))) {
    throw Error(ErrorCode::InvalidArgument, "budget ratio must be positive");
  }
  if (settings.budget_abs &&
      !(*settings.budget_abs > 0.0 && std::isfinite(*settings.budget_abs))) {
    throw Error(ErrorCode::InvalidArgument, "absolute budget must be positive");
  }
  if (settings.divisor < 1) {
    throw Error(ErrorCode::InvalidArgument, "divisor must be at least 1");
  }
  if (!(settings.alpha_min >= 0.0 && settings.alpha_min < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "alpha_min must lie in [0, 1)");
  }
}

std::int64_t rounded_width(double ratio, std::int64_t original,
                           std::int64_t divisor) {
  const double units =
      std::round(ratio * static_cast<double>(original) /
                 static_cast<double>(divisor));
  std::int64_t kept = std::max<std::int64_t>(
      divisor, divisor * static_cast<std::int64_t>(units));
  return std::clamp<std::int64_t>(kept, 1, original);
}

void set_group(const NetworkDescription& net, int group, std::int64_t width,
               std::map<std::string, std::int64_t>& channels) {
  for (const auto& name : net.members(group)) channels[name] = width;
}

std::string format_double(double value, int precision = 6) {
  std::ostringstream out;
  out << std::setprecision(precision) << value;
  return out.str();
}

}  // namespace

std::map<std::string, std::int64_t> PruningPlan::channels() const {
  std::map<std::string, std::int64_t> out;
  for (const auto& layer : layers) out[layer.name] = layer.kept;
  return out;
}

std::map<std::string, std::int64_t> round_and_repair(
    const Eigen::Ref<const Eigen::VectorXd>& alpha,
    const Eigen::Ref<const Eigen::VectorXd>& group_importance,
    const NetworkDescription& net, BudgetKind kind, double budget,
    std::int64_t divisor) {
  const auto groups = static_cast<Eigen::Index>(net.group_count());
  if (alpha.size() != groups || group_importance.size() != groups) {
    throw Error(ErrorCode::DimensionMismatch,
                "one ratio and one importance per prunable group required");
  }
  if (divisor < 1) {
    throw Error(ErrorCode::InvalidArgument, "divisor must be at least 1");
  }

  std::map<std::string, std::int64_t> channels;
  for (const auto& layer : net.layers()) channels[layer.name] = layer.out_channels;
  std::vector<std::int64_t> widths(static_cast<std::size_t>(groups));
  for (Eigen::Index p = 0; p < groups; ++p) {
    const int group = net.prunable_groups()[static_cast<std::size_t>(p)];
    widths[static_cast<std::size_t>(p)] =
        rounded_width(alpha(p), net.group_channels(group), divisor);
    set_group(net, group, widths[static_cast<std::size_t>(p)], channels);
  }

  double cost = count_cost(net, kind, channels);
  while (cost > budget) {
    // Drop the step that costs the least objective per unit of cost saved.
    Eigen::Index chosen = -1;
    double chosen_score = std::numeric_limits<double>::infinity();
    double chosen_cost = cost;
    for (Eigen::Index p = 0; p < groups; ++p) {
      const auto slot = static_cast<std::size_t>(p);
      const std::int64_t next = widths[slot] - divisor;
      if (next < divisor || next < 1) continue;
      const int group = net.prunable_groups()[slot];
      auto trial = channels;
      set_group(net, group, next, trial);
      const double trial_cost = count_cost(net, kind, trial);
      const double saved = cost - trial_cost;
      if (saved <= 0.0) continue;
      const double lost = group_importance(p) * static_cast<double>(divisor) /
                          static_cast<double>(net.group_channels(group));
      const double score = lost / saved;
      if (score < chosen_score) {
        chosen_score = score;
        chosen = p;
        chosen_cost = trial_cost;
      }
    }
    if (chosen < 0) {
      throw Error(ErrorCode::RepairFailed,
                  "every group is at its minimum width and the cost " +
                      format_double(cost, 12) + " still exceeds " +
                      format_double(budget, 12));
    }
    const auto slot = static_cast<std::size_t>(chosen);
    widths[slot] -= divisor;
    set_group(net, net.prunable_groups()[slot], widths[slot], channels);
    cost = chosen_cost;
  }
  return channels;
}

PruningPlan plan(const ActivationDump& dump, const NetworkDescription& net,
                 const PlanSettings& settings) {
  check_settings(settings);
  const std::int64_t samples =
      settings.samples.value_or(std::min(kDefaultSamples, dump.samples));

  const IndependenceMatrix h = build_independence_matrix(
      dump, settings.kernel, settings.pooling, samples, settings.threads);
  const ImportanceVector layer_importance = importance(h, settings.beta);
  const GroupImportance groups = importance_to_groups(layer_importance, net);
  const ConstraintForm form = constraint_form(net, settings.budget_kind);
  const double budget = settings.budget_ratio
                            ? *settings.budget_ratio * form.full_cost
                            : *settings.budget_abs;

  PruningPlan out;
  out.budget = budget;
  out.full_cost = form.full_cost;
  out.budget_kind = settings.budget_kind;
  out.beta = settings.beta;
  out.n_samples = samples;
  out.kernel = to_string(settings.kernel);
  out.pooling = settings.pooling;
  out.alpha_min = settings.alpha_min;
  out.divisor = settings.divisor;
  out.diagnostics = h.diagnostics;
  out.diagnostics.insert(out.diagnostics.end(), groups.diagnostics.begin(),
                         groups.diagnostics.end());

  Eigen::VectorXd alpha = Eigen::VectorXd::Ones(groups.values.size());
  if (net.group_count() == 0) {
    if (form.full_cost > budget) {
      throw Error(ErrorCode::InfeasibleBudget,
                  "no prunable groups and the network exceeds the budget");
    }
  } else {
    SolverOptions options;
    options.alpha_min = settings.alpha_min;
    const SolverResult solved = solve(groups.values, form, budget, options);
    if (solved.status == SolverStatus::InfeasibleBudget) {
      throw Error(ErrorCode::InfeasibleBudget,
                  "budget " + format_double(budget, 12) +
                      " is below the cost at the minimum ratio (" +
                      format_double(solved.constraint_value, 12) + ")");
    }
    out.solver_status = std::string(to_string(solved.status));
    alpha = solved.alpha;
  }

  const auto channels = round_and_repair(alpha, groups.values, net,
                                         settings.budget_kind, budget,
                                         settings.divisor);
  out.achieved_cost = count_cost(net, settings.budget_kind, channels);

  for (std::size_t p = 0; p < net.group_count(); ++p) {
    out.ratios[net.prunable_groups()[p]] = alpha(static_cast<Eigen::Index>(p));
  }
  for (const auto& spec : net.layers()) {
    LayerPlan layer;
    layer.name = spec.name;
    layer.group = spec.group_id;
    layer.original = spec.out_channels;
    layer.kept = channels.at(spec.name);
    const auto ratio = out.ratios.find(spec.group_id);
    layer.ratio = ratio == out.ratios.end() ? 1.0 : ratio->second;
    if (dump.contains(spec.name)) {
      const auto index = h.index_of(spec.name);
      layer.importance = layer_importance.values(index);
      layer.degenerate = h.degenerate[static_cast<std::size_t>(index)];
    }
    out.layers.push_back(std::move(layer));
  }
  return out;
}

PruningPlan plan(const std::filesystem::path& manifest,
                 const std::filesystem::path& topology,
                 const PlanSettings& settings) {
  const ActivationDump dump = read_dump(manifest);
  const NetworkDescription net = parse_network(topology);
  return plan(dump, net, settings);
}

ReportFormat parse_report_format(std::string_view text) {
  if (text == "json") return ReportFormat::Json;
  if (text == "text") return ReportFormat::Text;
  if (text == "csv") return ReportFormat::Csv;
  throw Error(ErrorCode::InvalidArgument,
              "unknown format '" + std::string(text) + "'");
}

std::string plan_to_json(const PruningPlan& plan) {
  json doc;
  json ratios = json::object();
  for (const auto& [group, ratio] : plan.ratios) {
    ratios[std::to_string(group)] = ratio;
  }
  doc["ratios"] = ratios;
  json channels = json::object();
  for (const auto& layer : plan.layers) channels[layer.name] = layer.kept;
  doc["channels"] = channels;
  doc["achieved_cost"] = plan.achieved_cost;
  doc["budget"] = plan.budget;
  doc["meta"] = {
      {"beta", plan.beta},
      {"n", plan.n_samples},
      {"kernel", plan.kernel},
      {"pooling", std::string(to_string(plan.pooling))},
      {"alpha_min", plan.alpha_min},
      {"divisor", plan.divisor},
      {"budget_kind", std::string(to_string(plan.budget_kind))},
      {"full_cost", plan.full_cost},
      {"solver_status", plan.solver_status},
      {"versions",
       {{"chanplan", std::string(kVersion)}, {"plan_format", kPlanFormatVersion}}},
  };
  json layers = json::array();
  for (const auto& layer : plan.layers) {
    layers.push_back({{"name", layer.name},
                      {"group", layer.group},
                      {"original", layer.original},
                      {"kept", layer.kept},
                      {"ratio", layer.ratio},
                      {"importance", layer.importance},
                      {"degenerate", layer.degenerate}});
  }
  doc["layers"] = layers;
  doc["diagnostics"] = plan.diagnostics;
  return doc.dump(2) + "\n";
}

PruningPlan plan_from_json(std::string_view text) {
  PruningPlan plan;
  try {
    const json doc = json::parse(text);
    if (!doc.at("ratios").is_object()) {
      throw Error(ErrorCode::SchemaViolation, "plan JSON: ratios must be an object");
    }
    for (const auto& [key, ratio] : doc.at("ratios").items()) {
      int group = 0;
      const auto [end, ec] =
          std::from_chars(key.data(), key.data() + key.size(), group);
      if (ec != std::errc() || end != key.data() + key.size()) {
        throw Error(ErrorCode::SchemaViolation,
                    "plan JSON: ratio key '" + key + "' is not a group id");
      }
      plan.ratios[group] = ratio.get<double>();
    }
    plan.achieved_cost = doc.at("achieved_cost").get<double>();
    plan.budget = doc.at("budget").get<double>();
    const json& meta = doc.at("meta");
    plan.beta = meta.at("beta").get<double>();
    plan.n_samples = meta.at("n").get<std::int64_t>();
    plan.kernel = meta.at("kernel").get<std::string>();
    plan.pooling = parse_pooling(meta.at("pooling").get<std::string>());
    plan.alpha_min = meta.at("alpha_min").get<double>();
    plan.divisor = meta.at("divisor").get<std::int64_t>();
    plan.budget_kind = parse_budget_kind(meta.at("budget_kind").get<std::string>());
    plan.full_cost = meta.at("full_cost").get<double>();
    plan.solver_status = meta.at("solver_status").get<std::string>();
    for (const auto& node : doc.at("layers")) {
      LayerPlan layer;
      layer.name = node.at("name").get<std::string>();
      layer.group = node.at("group").get<int>();
      layer.original = node.at("original").get<std::int64_t>();
      layer.kept = node.at("kept").get<std::int64_t>();
      layer.ratio = node.at("ratio").get<double>();
      layer.importance = node.at("importance").get<double>();
      layer.degenerate = node.at("degenerate").get<bool>();
      if (doc.at("channels").at(layer.name).get<std::int64_t>() != layer.kept) {
        throw Error(ErrorCode::SchemaViolation,
                    "channels and layers disagree for '" + layer.name + "'");
      }
      plan.layers.push_back(std::move(layer));
    }
    plan.diagnostics = doc.value("diagnostics", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, std::string("plan JSON: ") + e.what());
  }
  return plan;
}

std::string render_plan(const PruningPlan& plan, ReportFormat format) {
  if (format == ReportFormat::Json) return plan_to_json(plan);

  std::ostringstream out;
  if (format == ReportFormat::Csv) {
    out << "layer,group,original,kept,ratio,importance\n"
        << std::setprecision(9);
    for (const auto& layer : plan.layers) {
      out << layer.name << ',' << layer.group << ',' << layer.original << ','
          << layer.kept << ',' << layer.ratio << ',' << layer.importance
          << '\n';
    }
    return out.str();
  }

  std::size_t name_width = 5;
  std::int64_t widest = 1;
  for (const auto& layer : plan.layers) {
    name_width = std::max(name_width, layer.name.size());
    widest = std::max(widest, layer.original);
  }
  out << "budget (" << to_string(plan.budget_kind)
      << "): " << format_double(plan.budget, 10) << " of "
      << format_double(plan.full_cost, 10) << "\n"
      << "achieved: " << format_double(plan.achieved_cost, 10) << " ("
      << std::fixed << std::setprecision(2)
      << 100.0 * plan.achieved_cost / std::max(plan.full_cost, 1.0)
      << "% of unpruned)\n"
      << std::defaultfloat << "beta " << plan.beta << ", n " << plan.n_samples
      << ", kernel " << plan.kernel << ", pooling " << to_string(plan.pooling)
      << ", solver " << plan.solver_status << "\n\n";

  out << std::left << std::setw(static_cast<int>(name_width)) << "layer"
      << std::right << std::setw(10) << "original" << std::setw(8) << "kept"
      << std::setw(10) << "ratio" << std::setw(12) << "importance" << '\n';
  for (const auto& layer : plan.layers) {
    out << std::left << std::setw(static_cast<int>(name_width)) << layer.name
        << std::right << std::setw(10) << layer.original << std::setw(8)
        << layer.kept << std::setw(10) << std::fixed << std::setprecision(4)
        << layer.ratio << std::setw(12) << std::setprecision(6)
        << layer.importance << std::defaultfloat
        << (layer.degenerate ? "  (degenerate)" : "") << '\n';
  }

  constexpr int kBarWidth = 48;
  out << "\nkept channels\n";
  for (const auto& layer : plan.layers) {
    const auto bar = static_cast<int>(std::lround(
        kBarWidth * static_cast<double>(layer.kept) / static_cast<double>(widest)));
    out << std::left << std::setw(static_cast<int>(name_width)) << layer.name
        << " |" << std::string(static_cast<std::size_t>(bar), '#')
        << std::string(static_cast<std::size_t>(kBarWidth - bar), ' ') << "| "
        << layer.kept << '\n';
  }
  for (const auto& line : plan.diagnostics) out << "note: " << line << '\n';
  return out.str();
}

}  // namespace chanplan
