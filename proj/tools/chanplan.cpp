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

// chanplan: channel-count planner driven by layer-wise normalized HSIC.
//
//   chanplan plan    --manifest dump/manifest.json --topology net.json
//                    --budget-ratio 0.5 --out plan.json
//   chanplan hsic    --manifest dump/manifest.json > hsic.csv
//   chanplan verify  --manifest dump/manifest.json
//   chanplan report  plan.json --format text
//
// Exit status: 0 success, 1 verification failure, 2 infeasible budget,
// 3 invalid input, 4 internal error.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "chanplan/error.hpp"
#include "chanplan/planner.hpp"

namespace {

using namespace chanplan;

constexpr int kExitVerifyFailed = 1;
constexpr int kExitInfeasible = 2;
constexpr int kExitBadInput = 3;
constexpr int kExitInternal = 4;

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  out << text;
  if (!out) throw Error(ErrorCode::Io, "short write to " + path);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

struct Flags {
  std::string manifest;
  std::string topology;
  std::string budget_kind = "flops";
  std::optional<double> budget_ratio;
  std::optional<double> budget_abs;
  double beta = 1.0;
  std::optional<std::int64_t> samples;
  std::string kernel = "linear";
  std::string pooling = "flatten";
  double alpha_min = 0.05;
  std::int64_t divisor = 1;
  std::string out;
  std::string format;
  std::string plan_file;
  unsigned threads = 0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Plan per-layer channel counts for a resource budget from "
               "layer activation samples"};
  app.require_subcommand(1);
  Flags flags;

  auto* plan_cmd = app.add_subcommand("plan", "Compute a pruning plan");
  plan_cmd->add_option("--manifest", flags.manifest, "Activation dump manifest")
      ->required();
  plan_cmd->add_option("--topology", flags.topology, "Network topology JSON")
      ->required();
  plan_cmd->add_option("--budget-kind", flags.budget_kind,
                       "flops or params")->capture_default_str();
  auto* ratio = plan_cmd->add_option("--budget-ratio", flags.budget_ratio,
                                     "Budget as a fraction of the unpruned cost");
  auto* absolute = plan_cmd->add_option("--budget-abs", flags.budget_abs,
                                        "Budget as an absolute cost");
  ratio->excludes(absolute);
  plan_cmd->add_option("--beta", flags.beta, "Importance temperature")
      ->capture_default_str();
  plan_cmd->add_option("--samples", flags.samples,
                       "Samples to use (default: min(64, dump size))");
  plan_cmd->add_option("--kernel", flags.kernel, "linear, rbf or rbf:<sigma>")
      ->capture_default_str();
  plan_cmd->add_option("--pooling", flags.pooling, "flatten or spatial_mean")
      ->capture_default_str();
  plan_cmd->add_option("--alpha-min", flags.alpha_min, "Smallest kept ratio")
      ->capture_default_str();
  plan_cmd->add_option("--divisor", flags.divisor, "Channel count multiple")
      ->capture_default_str();
  plan_cmd->add_option("--out", flags.out,
                       "Plan JSON path; the text report then goes to stdout");
  plan_cmd->add_option("--threads", flags.threads, "Worker threads (0 = all)");

  auto* hsic_cmd =
      app.add_subcommand("hsic", "Emit the pairwise nHSIC matrix as CSV");
  hsic_cmd->add_option("--manifest", flags.manifest)->required();
  hsic_cmd->add_option("--kernel", flags.kernel)->capture_default_str();
  hsic_cmd->add_option("--pooling", flags.pooling)->capture_default_str();
  hsic_cmd->add_option("--samples", flags.samples);
  hsic_cmd->add_option("--beta", flags.beta,
                       "Importance temperature for --format json")
      ->capture_default_str();
  hsic_cmd->add_option("--format", flags.format,
                       "csv (matrix only) or json (matrix and importance)");
  hsic_cmd->add_option("--out", flags.out);
  hsic_cmd->add_option("--threads", flags.threads);

  auto* verify_cmd =
      app.add_subcommand("verify", "Check estimator invariances on a dump");
  verify_cmd->add_option("--manifest", flags.manifest)->required();
  verify_cmd->add_option("--pooling", flags.pooling)->capture_default_str();
  verify_cmd->add_option("--threads", flags.threads);

  auto* report_cmd = app.add_subcommand("report", "Render a plan JSON");
  report_cmd->add_option("plan", flags.plan_file, "Plan JSON")->required();
  report_cmd->add_option("--format", flags.format, "json, text or csv");
  report_cmd->add_option("--out", flags.out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*plan_cmd) {
      PlanSettings settings;
      settings.budget_kind = parse_budget_kind(flags.budget_kind);
      settings.budget_ratio = flags.budget_ratio;
      settings.budget_abs = flags.budget_abs;
      if (!settings.budget_ratio && !settings.budget_abs) {
        throw Error(ErrorCode::InvalidArgument,
                    "one of --budget-ratio or --budget-abs is required");
      }
      settings.beta = flags.beta;
      settings.samples = flags.samples;
      settings.kernel = parse_kernel(flags.kernel);
      settings.pooling = parse_pooling(flags.pooling);
      settings.alpha_min = flags.alpha_min;
      settings.divisor = flags.divisor;
      settings.threads = flags.threads;
      const PruningPlan result = plan(flags.manifest, flags.topology, settings);
      if (flags.out.empty()) {
        std::cout << plan_to_json(result);
      } else {
        emit(plan_to_json(result), flags.out);
        std::cout << render_plan(result, ReportFormat::Text);
      }
    } else if (*hsic_cmd) {
      const ActivationDump dump = read_dump(flags.manifest);
      const auto samples = flags.samples.value_or(
          std::min(kDefaultSamples, dump.samples));
      const IndependenceMatrix h =
          build_independence_matrix(dump, parse_kernel(flags.kernel),
                                    parse_pooling(flags.pooling), samples,
                                    flags.threads);
      for (const auto& line : h.diagnostics) std::cerr << "note: " << line << '\n';
      if (flags.format.empty() || flags.format == "csv") {
        emit(independence_csv(h), flags.out);
      } else if (flags.format == "json") {
        emit(importance_report_json(h, importance(h, flags.beta)) + "\n",
             flags.out);
      } else {
        throw Error(ErrorCode::InvalidArgument,
                    "hsic --format must be csv or json");
      }
    } else if (*verify_cmd) {
      const VerifyReport report =
          verify(flags.manifest, parse_pooling(flags.pooling), flags.threads);
      std::cout << report.render();
      return report.passed() ? 0 : kExitVerifyFailed;
    } else if (*report_cmd) {
      const PruningPlan loaded = plan_from_json(slurp(flags.plan_file));
      const ReportFormat format = flags.format.empty()
                                      ? ReportFormat::Text
                                      : parse_report_format(flags.format);
      emit(render_plan(loaded, format), flags.out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.code() == ErrorCode::InfeasibleBudget ? kExitInfeasible
                                                   : kExitBadInput;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
  return 0;
}
