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

#include "chanplan/hsic.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/Cholesky>

#include "chanplan/error.hpp"

namespace chanplan {

namespace {

void require_samples(Eigen::Index n) {
  if (n < 2) {
    throw Error(ErrorCode::DegenerateInput,
                "kernel estimation needs at least 2 samples");
  }
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& x) {
  const Eigen::VectorXd norms = x.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = -2.0 * x * x.transpose();
  d2.colwise() += norms;
  d2.rowwise() += norms.transpose();
  d2 = d2.cwiseMax(0.0);
  d2.diagonal().setZero();
  return d2;
}

double log_det(const Eigen::MatrixXd& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0) {
    throw Error(ErrorCode::DimensionMismatch,
                std::string(what) + " must be square and non-empty");
  }
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw Error(ErrorCode::NotPositiveDefinite,
                std::string(what) + " is not symmetric");
  }
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::NotPositiveDefinite, what);
  }
  const auto diag = llt.matrixLLT().diagonal();
  if ((diag.array() <= 0.0).any()) {
    throw Error(ErrorCode::NotPositiveDefinite, what);
  }
  return 2.0 * diag.array().log().sum();
}

}  // namespace

KernelSpec parse_kernel(std::string_view text) {
  if (text == "linear") return KernelSpec::linear();
  if (text == "rbf") return KernelSpec::rbf();
  if (text.starts_with("rbf:")) {
    const std::string value(text.substr(4));
    double sigma = 0.0;
    try {
      std::size_t used = 0;
      sigma = std::stod(value, &used);
      if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument,
                  "bad rbf bandwidth '" + value + "'");
    }
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      throw Error(ErrorCode::InvalidArgument, "rbf bandwidth must be > 0");
    }
    return KernelSpec::rbf(sigma);
  }
  throw Error(ErrorCode::InvalidArgument,
              "unknown kernel '" + std::string(text) + "'");
}

std::string to_string(const KernelSpec& kernel) {
  if (kernel.kind == KernelKind::Linear) return "linear";
  if (kernel.bandwidth <= 0.0) return "rbf";
  std::ostringstream out;
  out.precision(17);
  out << "rbf:" << kernel.bandwidth;
  return out.str();
}

Eigen::MatrixXd center_columns(const Eigen::Ref<const Eigen::MatrixXd>& x) {
  Eigen::MatrixXd out = x;
  for (Eigen::Index c = 0; c < out.cols(); ++c) {
    auto column = out.col(c);
    if (column.size() == 0) continue;
    if (column.minCoeff() == column.maxCoeff()) {
      column.setZero();
    } else {
      column.array() -= column.mean();
    }
  }
  return out;
}

Eigen::MatrixXd double_center(const Eigen::Ref<const Eigen::MatrixXd>& k) {
  const Eigen::VectorXd row_means = k.rowwise().mean();
  const Eigen::RowVectorXd col_means = k.colwise().mean();
  const double grand = k.mean();
  Eigen::MatrixXd out = k;
  out.colwise() -= row_means;
  out.rowwise() -= col_means;
  out.array() += grand;
  // Restore exact symmetry lost to rounding.
  return 0.5 * (out + out.transpose());
}

double median_pairwise_distance(const Eigen::Ref<const Eigen::MatrixXd>& x) {
  const Eigen::Index n = x.rows();
  require_samples(n);
  const Eigen::MatrixXd d2 = squared_distances(x);
  std::vector<double> distances;
  distances.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index j = 1; j < n; ++j) {
    for (Eigen::Index i = 0; i < j; ++i) distances.push_back(std::sqrt(d2(i, j)));
  }
  const auto mid = distances.begin() + distances.size() / 2;
  std::nth_element(distances.begin(), mid, distances.end());
  double median = *mid;
  if (distances.size() % 2 == 0) {
    median = 0.5 * (median + *std::max_element(distances.begin(), mid));
  }
  if (median > 0.0) return median;
  // Mostly duplicated samples: fall back to the mean nonzero distance.
  double sum = 0.0;
  std::size_t count = 0;
  for (double d : distances) {
    if (d > 0.0) {
      sum += d;
      ++count;
    }
  }
  return count > 0 ? sum / static_cast<double>(count) : 1.0;
}

GramMatrix gram(const Eigen::Ref<const Eigen::MatrixXd>& x,
                const KernelSpec& kernel) {
  require_samples(x.rows());
  GramMatrix out;
  out.kernel = kernel;
  out.centered = true;
  if (kernel.kind == KernelKind::Linear) {
    const Eigen::MatrixXd centered = center_columns(x);
    out.degenerate = centered.isZero(0.0);
    out.data = centered * centered.transpose();
    return out;
  }

  const Eigen::MatrixXd d2 = squared_distances(x);
  out.degenerate = d2.isZero(0.0);
  const double sigma =
      kernel.bandwidth > 0.0 ? kernel.bandwidth : median_pairwise_distance(x);
  out.kernel.bandwidth = sigma;
  const Eigen::MatrixXd k = (-d2.array() / (2.0 * sigma * sigma)).exp().matrix();
  out.data = out.degenerate ? Eigen::MatrixXd::Zero(x.rows(), x.rows())
                            : double_center(k);
  return out;
}

GramMatrix gram(const ActivationMatrix& x, const KernelSpec& kernel) {
  return gram(x.data.cast<double>(), kernel);
}

double hsic(const GramMatrix& kx, const GramMatrix& ky) {
  if (kx.size() != ky.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "Gram sizes " + std::to_string(kx.size()) + " and " +
                    std::to_string(ky.size()));
  }
  if (!kx.centered || !ky.centered) {
    throw Error(ErrorCode::InvalidArgument, "HSIC needs centered kernels");
  }
  const double m = static_cast<double>(kx.size() - 1);
  return kx.data.cwiseProduct(ky.data).sum() / (m * m);
}

Alignment nhsic(const GramMatrix& kx, const GramMatrix& ky) {
  if (kx.size() != ky.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "Gram sizes " + std::to_string(kx.size()) + " and " +
                    std::to_string(ky.size()));
  }
  const double nx = kx.data.norm();
  const double ny = ky.data.norm();
  if (kx.degenerate || ky.degenerate || nx == 0.0 || ny == 0.0) {
    return {0.0, true};
  }
  return {kx.data.cwiseProduct(ky.data).sum() / (nx * ny), false};
}

Alignment nhsic_linear(const Eigen::Ref<const Eigen::MatrixXd>& x,
                       const Eigen::Ref<const Eigen::MatrixXd>& y) {
  if (x.rows() != y.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "sample counts differ");
  }
  require_samples(x.rows());
  const Eigen::MatrixXd xc = center_columns(x);
  const Eigen::MatrixXd yc = center_columns(y);
  const double nx = (xc.transpose() * xc).norm();
  const double ny = (yc.transpose() * yc).norm();
  if (nx == 0.0 || ny == 0.0) return {0.0, true};
  return {(yc.transpose() * xc).squaredNorm() / (nx * ny), false};
}

PreparedLayer PreparedLayer::prepare(const ActivationMatrix& x,
                                     const KernelSpec& kernel) {
  return prepare(x.data.cast<double>(), kernel);
}

PreparedLayer PreparedLayer::prepare(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                     const KernelSpec& kernel) {
  require_samples(x.rows());
  PreparedLayer out;
  out.samples_ = x.rows();
  if (kernel.kind == KernelKind::Linear && x.cols() < x.rows()) {
    out.uses_features_ = true;
    out.matrix_ = center_columns(x);
    out.norm_ = (out.matrix_.transpose() * out.matrix_).norm();
    out.degenerate_ = out.matrix_.isZero(0.0);
  } else {
    GramMatrix g = gram(x, kernel);
    out.degenerate_ = g.degenerate;
    out.matrix_ = std::move(g.data);
    out.norm_ = out.matrix_.norm();
  }
  if (out.norm_ == 0.0) out.degenerate_ = true;
  return out;
}

double cross_trace(const PreparedLayer& a, const PreparedLayer& b) {
  if (a.samples_ != b.samples_) {
    throw Error(ErrorCode::DimensionMismatch, "sample counts differ");
  }
  if (a.uses_features_ && b.uses_features_) {
    return (b.matrix_.transpose() * a.matrix_).squaredNorm();
  }
  if (!a.uses_features_ && !b.uses_features_) {
    return a.matrix_.cwiseProduct(b.matrix_).sum();
  }
  // tr(X X^T K) = sum((K X) .* X)
  const Eigen::MatrixXd& features = a.uses_features_ ? a.matrix_ : b.matrix_;
  const Eigen::MatrixXd& kernel = a.uses_features_ ? b.matrix_ : a.matrix_;
  return (kernel * features).cwiseProduct(features).sum();
}

Alignment nhsic(const PreparedLayer& a, const PreparedLayer& b) {
  if (a.samples_ != b.samples_) {
    throw Error(ErrorCode::DimensionMismatch, "sample counts differ");
  }
  if (a.degenerate_ || b.degenerate_) return {0.0, true};
  return {cross_trace(a, b) / (a.norm_ * b.norm_), false};
}

double gaussian_mutual_information(
    const Eigen::Ref<const Eigen::MatrixXd>& sigma_x,
    const Eigen::Ref<const Eigen::MatrixXd>& sigma_y,
    const Eigen::Ref<const Eigen::MatrixXd>& sigma_xy) {
  const Eigen::Index dx = sigma_x.rows();
  const Eigen::Index dy = sigma_y.rows();
  if (sigma_xy.rows() != dx || sigma_xy.cols() != dy) {
    throw Error(ErrorCode::DimensionMismatch,
                "cross-covariance must be dim(X) x dim(Y)");
  }
  Eigen::MatrixXd joint(dx + dy, dx + dy);
  joint.topLeftCorner(dx, dx) = sigma_x;
  joint.topRightCorner(dx, dy) = sigma_xy;
  joint.bottomLeftCorner(dy, dx) = sigma_xy.transpose();
  joint.bottomRightCorner(dy, dy) = sigma_y;

  const double joint_log_det = log_det(joint, "joint covariance");
  const double mi = 0.5 * (log_det(sigma_x, "covariance of X") +
                           log_det(sigma_y, "covariance of Y") - joint_log_det);
  return std::max(0.0, mi);
}

}  // namespace chanplan
