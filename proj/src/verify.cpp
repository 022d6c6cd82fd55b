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

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>

#include "chanplan/error.hpp"
#include "chanplan/planner.hpp"

namespace chanplan {

namespace {

constexpr std::uint64_t kSeed = 0x5eed;

std::string fmt(double value) {
  std::ostringstream out;
  out.precision(3);
  out << value;
  return out.str();
}

Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols,
                         std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = normal(rng);
  return out;
}

// X * (I - 2 v1 v1^T)(I - 2 v2 v2^T)(I - 2 v3 v3^T): orthogonal without
// forming a d x d matrix.
Eigen::MatrixXd reflect(Eigen::MatrixXd x, std::mt19937_64& rng) {
  for (int i = 0; i < 3; ++i) {
    Eigen::VectorXd v = gaussian(x.cols(), 1, rng);
    v.normalize();
    x -= 2.0 * (x * v) * v.transpose();
  }
  return x;
}

// Sample nHSIC and closed-form mutual information as the cross-covariance
// grows from 0 to 0.9 of a fixed block.
VerifyCheck gaussian_agreement() {
  constexpr Eigen::Index kSamples = 2000;
  Eigen::Matrix2d block;
  block << 0.6, 0.2, 0.1, 0.5;
  std::mt19937_64 rng(kSeed);
  const Eigen::MatrixXd noise = gaussian(kSamples, 4, rng);

  std::vector<double> alignment;
  std::vector<double> information;
  for (int step = 0; step <= 9; ++step) {
    const double t = 0.1 * step;
    Eigen::Matrix4d joint = Eigen::Matrix4d::Identity();
    joint.topRightCorner(2, 2) = t * block;
    joint.bottomLeftCorner(2, 2) = t * block.transpose();
    const Eigen::Matrix4d factor = joint.llt().matrixL();
    const Eigen::MatrixXd z = noise * factor.transpose();
    alignment.push_back(nhsic_linear(z.leftCols(2), z.rightCols(2)).value);
    information.push_back(gaussian_mutual_information(
        Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity(), t * block));
  }
  auto inversions = [](const std::vector<double>& v, double& worst) {
    int count = 0;
    worst = 0.0;
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (v[i] < v[i - 1]) {
        ++count;
        worst = std::max(worst, v[i - 1] - v[i]);
      }
    }
    return count;
  };
  double worst_alignment = 0.0;
  double worst_information = 0.0;
  const int bad_alignment = inversions(alignment, worst_alignment);
  const int bad_information = inversions(information, worst_information);
  const bool passed = bad_alignment <= 1 && worst_alignment < 0.01 &&
                      bad_information == 0 && alignment.front() < 0.05 &&
                      information.front() == 0.0;
  return {"gaussian_mutual_information_agreement", passed,
          "nHSIC " + fmt(alignment.front()) + " -> " + fmt(alignment.back()) +
              ", MI " + fmt(information.front()) + " -> " +
              fmt(information.back())};
}

VerifyCheck independent_control() {
  std::mt19937_64 rng(kSeed + 1);
  const Eigen::MatrixXd x = gaussian(1000, 10, rng);
  const Eigen::MatrixXd y = gaussian(1000, 10, rng);
  const double value = nhsic(gram(x, KernelSpec::linear()),
                             gram(y, KernelSpec::linear()))
                           .value;
  return {"independent_control", value < 0.05, "nHSIC " + fmt(value)};
}

}  // namespace

bool VerifyReport::passed() const noexcept {
  return std::all_of(checks.begin(), checks.end(),
                     [](const VerifyCheck& c) { return c.passed; });
}

std::string VerifyReport::render() const {
  std::ostringstream out;
  for (const auto& check : checks) {
    out << (check.passed ? "PASS " : "FAIL ") << check.name;
    if (!check.detail.empty()) out << "  (" << check.detail << ")";
    out << '\n';
  }
  for (const auto& line : diagnostics) out << "note: " << line << '\n';
  return out.str();
}

VerifyReport verify(const ActivationDump& dump, Pooling pooling,
                    unsigned threads) {
  VerifyReport report;
  std::vector<Eigen::MatrixXd> layers;
  std::vector<std::string> names;
  std::vector<PreparedLayer> prepared;
  for (const auto& entry : dump.layers) {
    layers.push_back(load_layer(dump, entry.name, pooling).data.cast<double>());
    names.push_back(entry.name);
    prepared.push_back(PreparedLayer::prepare(layers.back(), KernelSpec::linear()));
  }

  double worst_scale = 0.0;
  double worst_orthogonal = 0.0;
  int pairs = 0;
  std::mt19937_64 rng(kSeed + 2);
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    if (prepared[i].degenerate() || prepared[i + 1].degenerate()) continue;
    ++pairs;
    const double base = nhsic(prepared[i], prepared[i + 1]).value;
    for (double factor : {1e-3, 1e3}) {
      const auto scaled =
          PreparedLayer::prepare(factor * layers[i], KernelSpec::linear());
      worst_scale = std::max(
          worst_scale, std::abs(nhsic(scaled, prepared[i + 1]).value - base));
    }
    const auto rotated =
        PreparedLayer::prepare(reflect(layers[i], rng), KernelSpec::linear());
    worst_orthogonal = std::max(
        worst_orthogonal, std::abs(nhsic(rotated, prepared[i + 1]).value - base));
  }
  const std::string pair_note = std::to_string(pairs) + " layer pairs";
  report.checks.push_back({"scale_invariance", worst_scale <= 1e-10,
                           pair_note + ", max deviation " + fmt(worst_scale)});
  report.checks.push_back({"orthogonal_invariance", worst_orthogonal <= 1e-8,
                           pair_note + ", max deviation " + fmt(worst_orthogonal)});

  if (prepared.size() >= 2) {
    const IndependenceMatrix h = build_independence_matrix(prepared, names, threads);
    const bool symmetric = h.values == h.values.transpose();
    const bool in_range = (h.values.array() >= -1e-12).all() &&
                          (h.values.array() <= 1.0 + 1e-9).all();
    report.checks.push_back({"independence_matrix_symmetric_in_range",
                             symmetric && in_range,
                             std::to_string(h.size()) + " layers"});
    report.diagnostics = h.diagnostics;
  } else {
    for (std::size_t i = 0; i < prepared.size(); ++i) {
      if (prepared[i].degenerate()) {
        report.diagnostics.push_back("layer '" + names[i] +
                                     "' has a constant activation");
      }
    }
  }

  report.checks.push_back(independent_control());
  report.checks.push_back(gaussian_agreement());
  return report;
}

VerifyReport verify(const std::filesystem::path& manifest, Pooling pooling,
                    unsigned threads) {
  return verify(read_dump(manifest), pooling, threads);
}

}  // namespace chanplan
