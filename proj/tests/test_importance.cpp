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

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "chanplan/error.hpp"
#include "chanplan/importance.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "json.hpp"
#include "oracles.hpp"

using namespace chanplan;
using chanplan::testing::random_normal;

namespace {

ActivationMatrix activation(const Eigen::MatrixXd& x, std::string name) {
  ActivationMatrix m;
  m.data = x.cast<float>();
  m.layer_name = std::move(name);
  center_columns(m);
  return m;
}

IndependenceMatrix matrix_of(const Eigen::MatrixXd& values) {
  IndependenceMatrix h;
  h.values = values;
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    h.layer_names.push_back("l" + std::to_string(i));
  }
  h.degenerate.assign(static_cast<std::size_t>(values.rows()), false);
  return h;
}

IndependenceMatrix random_symmetric(int size, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(size, size);
  for (int i = 0; i < size; ++i) {
    for (int j = i + 1; j < size; ++j) v(i, j) = v(j, i) = unit(rng);
  }
  return matrix_of(v);
}

std::vector<ActivationMatrix> correlated_layers(int count, std::mt19937_64& rng) {
  const Eigen::MatrixXd z = random_normal(64, 3, rng);
  std::vector<ActivationMatrix> layers;
  for (int l = 0; l < count; ++l) {
    const Eigen::MatrixXd x = z * random_normal(3, 6 + l, rng) +
                              (0.5 + l) * random_normal(64, 6 + l, rng);
    layers.push_back(activation(x, "layer" + std::to_string(l)));
  }
  return layers;
}

}  // namespace

TEST_CASE("importance from off-diagonal sums") {
  Eigen::Matrix3d v;
  v << 1.0, 0.5, 0.0,
       0.5, 1.0, 0.5,
       0.0, 0.5, 1.0;
  const ImportanceVector i = importance(matrix_of(v), 1.0);
  CHECK(i.values(0) == doctest::Approx(std::exp(-0.5)));
  CHECK(i.values(1) == doctest::Approx(std::exp(-1.0)));
  CHECK(i.values(0) == doctest::Approx(0.60653).epsilon(1e-5));
  CHECK(i.values(1) == doctest::Approx(0.36788).epsilon(1e-5));
  CHECK(i.at("l2") == i.values(2));

  const ImportanceVector flat = importance(matrix_of(v), 0.0);
  CHECK(flat.values == Eigen::Vector3d::Ones());

  CHECK_THROWS_AS(importance(matrix_of(v), -1.0), Error);
  CHECK_THROWS_AS(importance(matrix_of(v), std::nan("")), Error);
}

TEST_CASE("larger beta spreads the importance further") {
  const auto variance = [](const Eigen::VectorXd& v) {
    const double mean = v.sum() / static_cast<double>(v.size());
    return (v.array() - mean).square().sum() / static_cast<double>(v.size());
  };
  const std::vector<double> betas{0.5, 2.0};
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const IndependenceMatrix h = random_symmetric(6, rng);
    const auto sweep = importance_sweep(h, betas);
    REQUIRE(sweep.size() == 2);
    CHECK(sweep[0].beta == 0.5);
    CHECK(importance_variance(sweep[1]) ==
          doctest::Approx(variance(sweep[1].values)).epsilon(1e-14));
    // Spread relative to scale grows with beta for any h.
    const auto spread = [](const Eigen::VectorXd& v) {
      return v.maxCoeff() / v.minCoeff();
    };
    const auto relative = [&](const Eigen::VectorXd& v) {
      const double mean = v.sum() / static_cast<double>(v.size());
      return variance(v) / (mean * mean);
    };
    CHECK(spread(sweep[1].values) > spread(sweep[0].values));
    CHECK(relative(sweep[1].values) > relative(sweep[0].values));
  }

  // Absolute variance grows too while beta times the row sums stays small.
  Eigen::Matrix4d v;
  v << 1.00, 0.05, 0.10, 0.02,
       0.05, 1.00, 0.20, 0.15,
       0.10, 0.20, 1.00, 0.01,
       0.02, 0.15, 0.01, 1.00;
  const auto small = importance_sweep(matrix_of(v), betas);
  CHECK(importance_variance(small[1]) > importance_variance(small[0]));

  // It does not grow once the importance of every layer is already near 0.
  const Eigen::Matrix3d dense{{1.0, 0.9, 0.8}, {0.9, 1.0, 0.95}, {0.8, 0.95, 1.0}};
  const auto saturated = importance_sweep(matrix_of(dense), betas);
  CHECK(importance_variance(saturated[1]) < importance_variance(saturated[0]));
}

TEST_CASE("permuting layers permutes the importance") {
  std::mt19937_64 rng(2);
  const IndependenceMatrix h = random_symmetric(5, rng);
  const std::vector<int> order{3, 0, 4, 1, 2};
  Eigen::MatrixXd permuted(5, 5);
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) permuted(i, j) = h.values(order[i], order[j]);
  }
  const ImportanceVector a = importance(h, 1.3);
  const ImportanceVector b = importance(matrix_of(permuted), 1.3);
  for (int i = 0; i < 5; ++i) {
    CHECK(b.values(i) == doctest::Approx(a.values(order[i])).epsilon(1e-14));
  }
}

TEST_CASE("raising one entry lowers only that row's importance") {
  std::mt19937_64 rng(3);
  const IndependenceMatrix h = random_symmetric(4, rng);
  IndependenceMatrix bumped = h;
  bumped.values(1, 3) += 0.1;  // row 1 only, deliberately asymmetric
  const ImportanceVector a = importance(h, 1.0);
  const ImportanceVector b = importance(bumped, 1.0);
  CHECK(b.values(1) < a.values(1));
  for (int i : {0, 2, 3}) CHECK(b.values(i) == a.values(i));
}

TEST_CASE("matrix assembly") {
  std::mt19937_64 rng(4);
  const auto layers = correlated_layers(3, rng);
  const IndependenceMatrix h = build_independence_matrix(layers, KernelSpec::linear());
  REQUIRE(h.size() == 3);
  CHECK(h.samples == 64);
  CHECK(h.layer_names == std::vector<std::string>{"layer0", "layer1", "layer2"});
  for (int i = 0; i < 3; ++i) {
    CHECK(h.values(i, i) == 1.0);
    for (int j = 0; j < 3; ++j) {
      CHECK(h.values(i, j) == h.values(j, i));
      CHECK(h.values(i, j) >= 0.0);
      CHECK(h.values(i, j) <= 1.0 + 1e-9);
      if (i != j) {
        const Alignment direct = nhsic_linear(layers[i].data.cast<double>(),
                                              layers[j].data.cast<double>());
        CHECK(h.values(i, j) == doctest::Approx(direct.value).epsilon(1e-10));
      }
    }
  }

  SUBCASE("identical layers are fully aligned") {
    std::vector<ActivationMatrix> twins{layers[0], layers[0]};
    twins[1].layer_name = "twin";
    const auto t = build_independence_matrix(twins, KernelSpec::linear());
    CHECK(t.values(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("thread count does not change the result") {
    const auto many = correlated_layers(9, rng);
    const auto one = build_independence_matrix(many, KernelSpec::linear(), 1);
    const auto four = build_independence_matrix(many, KernelSpec::linear(), 4);
    CHECK(one.values == four.values);
  }
  SUBCASE("a single layer is rejected") {
    std::vector<ActivationMatrix> single{layers[0]};
    CHECK_THROWS_AS(build_independence_matrix(single, KernelSpec::linear()), Error);
  }
}

TEST_CASE("independent layers") {
  std::mt19937_64 rng(5);
  std::vector<ActivationMatrix> layers{
      activation(random_normal(1000, 10, rng), "a"),
      activation(random_normal(1000, 10, rng), "b")};
  const auto h = build_independence_matrix(layers, KernelSpec::linear());
  CHECK(h.values(0, 1) < 0.05);
}

TEST_CASE("scaling a layer's activations leaves the importance unchanged") {
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd z = random_normal(64, 3, rng);
  std::vector<Eigen::MatrixXd> raw;
  for (int l = 0; l < 4; ++l) {
    raw.push_back(z * random_normal(3, 8, rng) + random_normal(64, 8, rng));
  }
  const std::vector<std::string> names{"a", "b", "c", "d"};
  const auto importance_of = [&](const std::vector<Eigen::MatrixXd>& xs) {
    std::vector<PreparedLayer> prepared;
    for (const auto& x : xs) {
      prepared.push_back(PreparedLayer::prepare(x, KernelSpec::linear()));
    }
    return importance(build_independence_matrix(prepared, names), 1.0);
  };
  const ImportanceVector base = importance_of(raw);
  for (const double c : {1e-3, 37.5, 1e3}) {
    auto scaled = raw;
    scaled[2] *= c;
    CHECK((base.values - importance_of(scaled).values).cwiseAbs().maxCoeff() <=
          1e-10);
  }

  // Stored activations: a power-of-two scale is exact in single precision.
  auto layers = correlated_layers(4, rng);
  const ImportanceVector stored =
      importance(build_independence_matrix(layers, KernelSpec::linear()), 1.0);
  layers[2].data *= 32.0f;
  const ImportanceVector stored_scaled =
      importance(build_independence_matrix(layers, KernelSpec::linear()), 1.0);
  CHECK((stored.values - stored_scaled.values).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("constant layers are flagged") {
  std::mt19937_64 rng(7);
  auto layers = correlated_layers(3, rng);
  layers[1].data.setZero();
  const auto h = build_independence_matrix(layers, KernelSpec::linear());
  CHECK(h.degenerate == std::vector<bool>{false, true, false});
  CHECK(h.values.row(1).isZero(0.0));
  CHECK(h.values.col(1).isZero(0.0));
  REQUIRE(h.diagnostics.size() == 1);
  CHECK(h.diagnostics[0].find("layer1") != std::string::npos);
  const ImportanceVector i = importance(h, 1.0);
  CHECK(i.degenerate[1]);
  // The other two layers only see each other.
  CHECK(i.values(0) == doctest::Approx(std::exp(-h.values(0, 2))));
}

TEST_CASE("dump-level build honours the sample limit") {
  const auto dir = chanplan::testing::scratch_dir("importance_dump");
  const auto fixture = chanplan::testing::write_chain_fixture(dir, 40);
  const ActivationDump dump = read_dump(fixture.manifest);
  const auto h = build_independence_matrix(dump, KernelSpec::linear(),
                                           Pooling::Flatten, 16);
  CHECK(h.samples == 16);
  // Same thing assembled by hand from the first 16 rows, centered afresh.
  std::vector<ActivationMatrix> layers;
  for (const auto& name : dump.layer_names()) {
    ActivationMatrix m = take_samples(load_layer_raw(dump, name), 16);
    center_columns(m);
    layers.push_back(m);
  }
  const auto manual = build_independence_matrix(layers, KernelSpec::linear());
  CHECK((h.values - manual.values).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK_THROWS_AS(build_independence_matrix(dump, KernelSpec::linear(),
                                            Pooling::Flatten, 41),
                  Error);
}

TEST_CASE("CSV and JSON reports") {
  Eigen::Matrix3d v;
  v << 1.0, 0.123456789123, 0.0,
       0.123456789123, 1.0, 0.5,
       0.0, 0.5, 0.0;
  IndependenceMatrix h = matrix_of(v);
  h.degenerate[2] = true;
  h.samples = 64;
  const std::string csv = independence_csv(h);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "l0,l1,l2");
  std::getline(lines, line);
  CHECK(line == "1,0.123456789,0");
  int rows = 1;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 3);

  const auto report = nlohmann::json::parse(importance_report_json(h, importance(h, 2.0)));
  CHECK(report["layers"].size() == 3);
  CHECK(report["independence"][1][2] == 0.5);
  CHECK(report["importance"][0].get<double>() ==
        doctest::Approx(std::exp(-2.0 * 0.123456789123)));
  CHECK(report["beta"] == 2.0);
  CHECK(report["n"] == 64);
  CHECK(report["degenerate"] == nlohmann::json::array({"l2"}));
}
