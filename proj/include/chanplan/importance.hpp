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

#ifndef CHANPLAN_IMPORTANCE_HPP
#define CHANPLAN_IMPORTANCE_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "chanplan/activation_store.hpp"
#include "chanplan/hsic.hpp"

namespace chanplan {

/// Pairwise nHSIC between layer activations. Rows of degenerate layers
/// (identically zero centered kernel) are all zero, diagonal included.
struct IndependenceMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> layer_names;
  std::vector<bool> degenerate;
  std::vector<std::string> diagnostics;
  std::int64_t samples = 0;

  Eigen::Index size() const noexcept { return values.rows(); }
  Eigen::Index index_of(std::string_view name) const;
};

struct ImportanceVector {
  Eigen::VectorXd values;
  double beta = 1.0;
  std::vector<std::string> layer_names;
  std::vector<bool> degenerate;

  Eigen::Index size() const noexcept { return values.size(); }
  double at(std::string_view name) const;
};

/// Evaluates every unordered pair once, spreading pairs over `threads`
/// workers (0 = hardware concurrency). The result does not depend on the
/// thread count.
IndependenceMatrix build_independence_matrix(
    std::span<const PreparedLayer> layers,
    const std::vector<std::string>& names, unsigned threads = 0);

IndependenceMatrix build_independence_matrix(
    std::span<const ActivationMatrix> layers, const KernelSpec& kernel,
    unsigned threads = 0);

/// Loads every layer of the dump. `samples` truncates to the first n rows.
IndependenceMatrix build_independence_matrix(
    const ActivationDump& dump, const KernelSpec& kernel, Pooling pooling,
    std::optional<std::int64_t> samples = std::nullopt, unsigned threads = 0);

/// i_l = exp(-beta * sum_{j != l} H[l][j]).
ImportanceVector importance(const IndependenceMatrix& h, double beta);

/// Importance for several beta values over the same matrix.
std::vector<ImportanceVector> importance_sweep(const IndependenceMatrix& h,
                                               std::span<const double> betas);

/// Population variance of the importance entries.
double importance_variance(const ImportanceVector& importance);

/// Header row of layer names, then one row per layer, 9 significant digits.
std::string independence_csv(const IndependenceMatrix& h);

/// {"layers", "independence", "importance", "beta", "n", "degenerate"}.
std::string importance_report_json(const IndependenceMatrix& h,
                                   const ImportanceVector& importance);

}  // namespace chanplan

#endif  // CHANPLAN_IMPORTANCE_HPP
