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

#include <random>
#include <sstream>

#include "chanplan/error.hpp"
#include "chanplan/planner.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace chanplan;
using chanplan::testing::scratch_dir;

namespace {

LayerSpec conv(std::string name, std::int64_t in, std::int64_t out,
               std::int64_t k, std::int64_t size, int group, int input_group) {
  LayerSpec s;
  s.name = std::move(name);
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = k;
  s.out_h = s.out_w = size;
  s.group_id = group;
  s.input_group_id = input_group;
  return s;
}

// Dump with one random layer per topology layer.
fs::path random_dump(const fs::path& dir, const NetworkDescription& net,
                     std::int64_t samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal;
  std::vector<float> shared(static_cast<std::size_t>(samples));
  for (auto& v : shared) v = normal(rng);
  DumpWriter writer(dir, samples);
  for (const auto& spec : net.layers()) {
    const std::int64_t features = spec.out_channels * 4;
    std::vector<float> values(static_cast<std::size_t>(samples * features));
    for (std::int64_t s = 0; s < samples; ++s) {
      for (std::int64_t f = 0; f < features; ++f) {
        values[static_cast<std::size_t>(s * features + f)] =
            shared[static_cast<std::size_t>(s)] + normal(rng);
      }
    }
    writer.add_layer(spec.name, {spec.out_channels, 2, 2}, values);
  }
  return writer.finish();
}

PlanSettings ratio_settings(double ratio) {
  PlanSettings s;
  s.budget_ratio = ratio;
  return s;
}

ErrorCode error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error raised");
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("rounding to channel counts") {
  const auto single = [](std::int64_t width) {
    return NetworkDescription::from_layers({conv("c", 3, width, 3, 4, 1, -1)});
  };
  const Eigen::VectorXd half = Eigen::VectorXd::Constant(1, 0.5);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(1);
  CHECK(round_and_repair(half, one, single(64), BudgetKind::Params, 1e9, 8).at("c") == 32);
  CHECK(round_and_repair(half, one, single(10), BudgetKind::Params, 1e9, 1).at("c") == 5);
  // Never below the divisor, never above the layer.
  const Eigen::VectorXd tiny = Eigen::VectorXd::Constant(1, 0.01);
  CHECK(round_and_repair(tiny, one, single(64), BudgetKind::Params, 1e9, 8).at("c") == 8);
  CHECK(round_and_repair(tiny, one, single(64), BudgetKind::Params, 1e9, 1).at("c") == 1);
  CHECK(round_and_repair(one, one, single(6), BudgetKind::Params, 1e9, 8).at("c") == 6);
}

TEST_CASE("repair removes one step from the cheapest group to give up") {
  // Two independent 10-wide layers fed by the input; params cost is
  // kept_a + kept_b. Ratios 0.55 round up to 6 + 6 = 12 against a budget of 11.
  const auto net = NetworkDescription::from_layers(
      {conv("a", 1, 10, 1, 1, 1, -1), conv("b", 1, 10, 1, 1, 2, -1)});
  const Eigen::Vector2d alpha(0.55, 0.55);
  REQUIRE(evaluate_cost(constraint_form(net, BudgetKind::Params), alpha) ==
          doctest::Approx(11.0));
  const auto channels = round_and_repair(alpha, Eigen::Vector2d(0.9, 0.3), net,
                                         BudgetKind::Params, 11.0, 1);
  CHECK(channels.at("a") == 6);
  CHECK(channels.at("b") == 5);
  const auto swapped = round_and_repair(alpha, Eigen::Vector2d(0.3, 0.9), net,
                                        BudgetKind::Params, 11.0, 1);
  CHECK(swapped.at("a") == 5);
  CHECK(swapped.at("b") == 6);

  CHECK(error_of([&] {
          round_and_repair(alpha, Eigen::Vector2d(1, 1), net,
                           BudgetKind::Params, 1.0, 1);
        }) == ErrorCode::RepairFailed);
}

TEST_CASE("three-layer chain at half the FLOPs") {
  const auto net = NetworkDescription::from_layers(
      {conv("c1", 3, 16, 3, 8, 1, -1), conv("c2", 16, 32, 3, 8, 2, 1),
       conv("c3", 32, 32, 3, 8, 3, 2)});
  const fs::path dir = scratch_dir("planner_chain");
  const ActivationDump dump = read_dump(random_dump(dir, net, 64, 1));
  const PruningPlan p = plan(dump, net, ratio_settings(0.5));
  const double fraction = p.achieved_cost / p.full_cost;
  CHECK(fraction > 0.40);
  CHECK(fraction <= 0.50);
  CHECK(p.achieved_cost == count_cost(net, BudgetKind::Flops, p.channels()));
  CHECK(p.solver_status == "optimal");
  CHECK(p.n_samples == 64);
  for (const auto& layer : p.layers) {
    CHECK(layer.kept >= 1);
    CHECK(layer.kept <= layer.original);
  }

  const PruningPlan full = plan(dump, net, ratio_settings(1.0));
  for (const auto& layer : full.layers) CHECK(layer.kept == layer.original);
  CHECK(full.achieved_cost == full.full_cost);

  CHECK(error_of([&] { plan(dump, net, ratio_settings(0.001)); }) ==
        ErrorCode::InfeasibleBudget);

  PlanSettings absolute;
  absolute.budget_abs = 0.5 * p.full_cost;
  CHECK(plan(dump, net, absolute) == p);

  PlanSettings both = ratio_settings(0.5);
  both.budget_abs = 1.0;
  CHECK(error_of([&] { plan(dump, net, both); }) == ErrorCode::InvalidArgument);
  CHECK(error_of([&] { plan(dump, net, PlanSettings{}); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("budget honesty on the fixture network") {
  const fs::path dir = scratch_dir("planner_fixture");
  const auto fixture = chanplan::testing::write_chain_fixture(dir);
  const ActivationDump dump = read_dump(fixture.manifest);
  for (const auto kind : {BudgetKind::Flops, BudgetKind::Params}) {
    for (const std::int64_t divisor : {1, 4, 8}) {
      for (const double ratio : {0.2, 0.3, 0.5, 0.7, 0.9}) {
        PlanSettings s = ratio_settings(ratio);
        s.budget_kind = kind;
        s.divisor = divisor;
        PruningPlan p;
        try {
          p = plan(dump, fixture.net, s);
        } catch (const Error& e) {
          // A coarse divisor can make a tight budget unreachable.
          CHECK(e.code() == ErrorCode::RepairFailed);
          continue;
        }
        CAPTURE(ratio);
        CAPTURE(divisor);
        CHECK(count_cost(fixture.net, kind, p.channels()) <= p.budget);
        for (const auto& layer : p.layers) {
          CHECK(layer.kept >= 1);
          CHECK(layer.kept <= layer.original);
          if (layer.kept < layer.original) CHECK(layer.kept % divisor == 0);
        }
        CHECK(p.channels().at("fc") == 10);
        // Residual partners keep equal widths.
        CHECK(p.channels().at("stem") == p.channels().at("res_b"));
        CHECK(p.channels().at("down") == p.channels().at("dw"));
      }
    }
  }
}

TEST_CASE("plan settings are recorded and results reproducible") {
  const fs::path dir = scratch_dir("planner_meta");
  const auto fixture = chanplan::testing::write_chain_fixture(dir, 80);
  PlanSettings s = ratio_settings(0.5);
  s.beta = 0.0;
  s.kernel = KernelSpec::rbf();
  s.pooling = Pooling::SpatialMean;
  s.alpha_min = 0.1;
  s.samples = 48;
  s.threads = 1;
  const PruningPlan a = plan(fixture.manifest, fixture.topology, s);
  s.threads = 4;
  const PruningPlan b = plan(fixture.manifest, fixture.topology, s);
  CHECK(plan_to_json(a) == plan_to_json(b));
  CHECK(a.n_samples == 48);
  CHECK(a.kernel == "rbf");
  CHECK(a.pooling == Pooling::SpatialMean);
  CHECK(a.alpha_min == 0.1);
  for (const auto& layer : a.layers) CHECK(layer.importance == 1.0);
  for (const auto& [group, ratio] : a.ratios) CHECK(ratio >= 0.1);

  const auto doc = nlohmann::json::parse(plan_to_json(a));
  CHECK(doc["meta"]["beta"] == 0.0);
  CHECK(doc["meta"]["n"] == 48);
  CHECK(doc["meta"]["kernel"] == "rbf");
  CHECK(doc["meta"]["pooling"] == "spatial_mean");
  CHECK(doc["meta"]["versions"]["chanplan"] == std::string(kVersion));
  CHECK(doc["channels"]["stem"] == a.channels().at("stem"));
  CHECK(doc["ratios"]["1"] == a.ratios.at(1));
  CHECK(doc["budget"] == a.budget);
  CHECK(doc["achieved_cost"] == a.achieved_cost);
}

TEST_CASE("dump missing a prunable layer") {
  const fs::path dir = scratch_dir("planner_unmapped");
  const auto fixture = chanplan::testing::write_chain_fixture(dir);
  std::vector<LayerSpec> layers = fixture.net.layers();
  layers.push_back(conv("extra", 48, 8, 1, 4, 6, 4));
  const auto net = NetworkDescription::from_layers(layers, {5});
  CHECK(error_of([&] {
          plan(read_dump(fixture.manifest), net, ratio_settings(0.5));
        }) == ErrorCode::UnmappedLayer);
}

TEST_CASE("reports") {
  // Thirteen 3x3 convs in the style of a VGG feature extractor.
  std::vector<LayerSpec> layers;
  const int widths[] = {16, 16, 32, 32, 64, 64, 64, 64, 64, 64, 64, 64, 64};
  const int sizes[] = {16, 16, 8, 8, 4, 4, 4, 2, 2, 2, 1, 1, 1};
  for (int l = 0; l < 13; ++l) {
    layers.push_back(conv("conv" + std::to_string(l + 1), l ? widths[l - 1] : 3,
                          widths[l], 3, sizes[l], l + 1, l ? l : -1));
  }
  const auto net = NetworkDescription::from_layers(layers);
  const fs::path dir = scratch_dir("planner_vgg");
  const ActivationDump dump = read_dump(random_dump(dir, net, 32, 2));
  const PruningPlan p = plan(dump, net, ratio_settings(0.4));

  SUBCASE("json round trip") {
    const std::string text = render_plan(p, ReportFormat::Json);
    CHECK(text == plan_to_json(p));
    CHECK(plan_from_json(text) == p);
    CHECK_THROWS_AS(plan_from_json("{\"ratios\": 3}"), Error);
  }
  SUBCASE("text table and profile") {
    const std::string text = render_plan(p, ReportFormat::Text);
    int table_rows = 0;
    int bars = 0;
    std::istringstream lines(text);
    std::string line;
    while (std::getline(lines, line)) {
      if (line.rfind("conv", 0) != 0) continue;
      if (line.find('|') == std::string::npos) {
        ++table_rows;
      } else {
        ++bars;
      }
    }
    CHECK(table_rows == 13);
    CHECK(bars == 13);
  }
  SUBCASE("csv") {
    std::istringstream lines(render_plan(p, ReportFormat::Csv));
    std::string line;
    std::getline(lines, line);
    CHECK(line == "layer,group,original,kept,ratio,importance");
    std::getline(lines, line);
    CHECK(line.rfind("conv1,1,16," + std::to_string(p.layers[0].kept) + ",", 0) == 0);
    int rows = 1;
    while (std::getline(lines, line)) ++rows;
    CHECK(rows == 13);
  }
  CHECK(parse_report_format("csv") == ReportFormat::Csv);
  CHECK_THROWS_AS(parse_report_format("xml"), Error);
}

TEST_CASE("verify on dumps") {
  const fs::path dir = scratch_dir("planner_verify");
  const auto fixture = chanplan::testing::write_chain_fixture(dir / "ok");
  const VerifyReport ok = verify(fixture.manifest);
  CHECK(ok.passed());
  CHECK(ok.checks.size() >= 4);
  CHECK(ok.diagnostics.empty());
  for (const auto& check : ok.checks) {
    CAPTURE(check.name);
    CAPTURE(check.detail);
    CHECK(check.passed);
  }
  CHECK(ok.render().find("FAIL") == std::string::npos);

  // A constant layer is listed and the checks still pass.
  const auto constant = chanplan::testing::write_chain_fixture(dir / "const");
  TensorHeader header;
  auto values = read_layer(dir / "const" / "pw.itpa", &header);
  std::fill(values.begin(), values.end(), 2.0f);
  write_layer(dir / "const" / "pw.itpa", header.dims, values);
  const VerifyReport flagged = verify(constant.manifest);
  CHECK(flagged.passed());
  REQUIRE(flagged.diagnostics.size() == 1);
  CHECK(flagged.diagnostics[0].find("pw") != std::string::npos);

  values[7] = std::numeric_limits<float>::quiet_NaN();
  write_layer(dir / "const" / "pw.itpa", header.dims, values);
  CHECK(error_of([&] { verify(constant.manifest); }) == ErrorCode::NonFiniteData);
}

TEST_CASE("downsampling layer stands out") {
  const fs::path dir = scratch_dir("planner_down");
  const auto fixture = chanplan::testing::write_downsample_fixture(dir);
  const ActivationDump dump = read_dump(fixture.manifest);
  const auto h = build_independence_matrix(dump, KernelSpec::linear(),
                                           Pooling::Flatten, 64);
  const ImportanceVector i = importance(h, 1.0);
  Eigen::Index best = 0;
  i.values.maxCoeff(&best);
  CHECK(i.layer_names[static_cast<std::size_t>(best)] ==
        chanplan::testing::kDownsampleLayer);
}
