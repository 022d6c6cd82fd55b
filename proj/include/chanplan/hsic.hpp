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

#ifndef CHANPLAN_HSIC_HPP
#define CHANPLAN_HSIC_HPP

#include <string>
#include <string_view>

#include <Eigen/Core>

#include "chanplan/activation_store.hpp"

namespace chanplan {

enum class KernelKind { Linear, Rbf };

struct KernelSpec {
  KernelKind kind = KernelKind::Linear;
  /// RBF bandwidth sigma; 0 selects the median pairwise distance.
  double bandwidth = 0.0;

  static KernelSpec linear() { return {}; }
  static KernelSpec rbf(double sigma = 0.0) { return {KernelKind::Rbf, sigma}; }
};

/// Accepts "linear", "rbf" and "rbf:<sigma>".
KernelSpec parse_kernel(std::string_view text);
std::string to_string(const KernelSpec& kernel);

/// Centered n x n kernel matrix.
struct GramMatrix {
  Eigen::MatrixXd data;
  KernelSpec kernel;
  bool centered = false;
  /// Set when the centered kernel is identically zero (constant samples).
  bool degenerate = false;

  Eigen::Index size() const noexcept { return data.rows(); }
};

/// Result of a normalized HSIC evaluation. A degenerate pair (either kernel
/// identically zero) reports value 0.
struct Alignment {
  double value = 0.0;
  bool degenerate = false;
};

/// Column-centers in double precision; constant columns become exact zeros.
Eigen::MatrixXd center_columns(const Eigen::Ref<const Eigen::MatrixXd>& x);

/// Double-centers a kernel matrix, i.e. H * K * H with H = I - 11^T / n.
Eigen::MatrixXd double_center(const Eigen::Ref<const Eigen::MatrixXd>& k);

/// Median of the pairwise Euclidean distances between rows.
double median_pairwise_distance(const Eigen::Ref<const Eigen::MatrixXd>& x);

/// Linear: X X^T on the column-centered X. RBF: double-centered
/// exp(-|x_i - x_j|^2 / (2 sigma^2)).
GramMatrix gram(const Eigen::Ref<const Eigen::MatrixXd>& x,
                const KernelSpec& kernel);
GramMatrix gram(const ActivationMatrix& x, const KernelSpec& kernel);

/// (n-1)^-2 tr(K_X K_Y) for centered kernels.
double hsic(const GramMatrix& kx, const GramMatrix& ky);

/// tr(K_X K_Y) / sqrt(tr(K_X K_X) tr(K_Y K_Y)).
Alignment nhsic(const GramMatrix& kx, const GramMatrix& ky);

/// Linear-kernel nHSIC in feature space:
/// |Y^T X|_F^2 / (|X^T X|_F |Y^T Y|_F), after centering both inputs.
Alignment nhsic_linear(const Eigen::Ref<const Eigen::MatrixXd>& x,
                       const Eigen::Ref<const Eigen::MatrixXd>& y);

/// A layer's kernel in whichever form makes pair evaluation cheapest: the
/// centered features when the kernel is linear and d < n, the centered Gram
/// otherwise. Both forms give identical traces.
class PreparedLayer {
 public:
  static PreparedLayer prepare(const ActivationMatrix& x,
                               const KernelSpec& kernel);
  static PreparedLayer prepare(const Eigen::Ref<const Eigen::MatrixXd>& x,
                               const KernelSpec& kernel);

  bool uses_features() const noexcept { return uses_features_; }
  bool degenerate() const noexcept { return degenerate_; }
  Eigen::Index samples() const noexcept { return samples_; }
  /// sqrt(tr(K K)).
  double norm() const noexcept { return norm_; }

  /// tr(K_a K_b).
  friend double cross_trace(const PreparedLayer& a, const PreparedLayer& b);
  friend Alignment nhsic(const PreparedLayer& a, const PreparedLayer& b);

 private:
  bool uses_features_ = false;
  bool degenerate_ = false;
  Eigen::Index samples_ = 0;
  double norm_ = 0.0;
  Eigen::MatrixXd matrix_;  // centered features (n x d) or centered Gram
};

double cross_trace(const PreparedLayer& a, const PreparedLayer& b);
Alignment nhsic(const PreparedLayer& a, const PreparedLayer& b);

/// Mutual information of jointly Gaussian X and Y:
/// 1/2 (ln|S_X| + ln|S_Y| - ln|S_(X,Y)|).
double gaussian_mutual_information(
    const Eigen::Ref<const Eigen::MatrixXd>& sigma_x,
    const Eigen::Ref<const Eigen::MatrixXd>& sigma_y,
    const Eigen::Ref<const Eigen::MatrixXd>& sigma_xy);

}  // namespace chanplan

#endif  // CHANPLAN_HSIC_HPP
