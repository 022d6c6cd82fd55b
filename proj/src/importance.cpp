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

#include "chanplan/importance.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>
#include <utility>

#include "chanplan/error.hpp"
#include "json.hpp"

namespace chanplan {

namespace {

unsigned worker_count(unsigned requested, std::size_t jobs) {
  unsigned threads = requested != 0 ? requested
                                    : std::max(1u, std::thread::hardware_concurrency());
  return static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(jobs, 1)));
}

// Runs job(i) for i in [0, count) on a small pool. The first exception is
// rethrown after all workers have joined.
template <typename Job>
void parallel_for(std::size_t count, unsigned threads, Job job) {
  const unsigned workers = worker_count(threads, count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            job(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace

Eigen::Index IndependenceMatrix::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < layer_names.size(); ++i) {
    if (layer_names[i] == name) return static_cast<Eigen::Index>(i);
  }
  throw Error(ErrorCode::LayerNotFound, std::string(name));
}

double ImportanceVector::at(std::string_view name) const {
  for (std::size_t i = 0; i < layer_names.size(); ++i) {
    if (layer_names[i] == name) return values(static_cast<Eigen::Index>(i));
  }
  throw Error(ErrorCode::LayerNotFound, std::string(name));
}

IndependenceMatrix build_independence_matrix(
    std::span<const PreparedLayer> layers,
    const std::vector<std::string>& names, unsigned threads) {
  const std::size_t count = layers.size();
  if (count < 2) {
    throw Error(ErrorCode::InvalidArgument,
                "independence matrix needs at least 2 layers");
  }
  if (names.size() != count) {
    throw Error(ErrorCode::DimensionMismatch, "one name per layer required");
  }

  IndependenceMatrix h;
  h.layer_names = names;
  h.samples = layers.front().samples();
  h.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(count),
                                   static_cast<Eigen::Index>(count));
  h.degenerate.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    h.degenerate[i] = layers[i].degenerate();
    if (layers[i].samples() != h.samples) {
      throw Error(ErrorCode::SampleCountMismatch, names[i]);
    }
    if (h.degenerate[i]) {
      h.diagnostics.push_back("layer '" + names[i] +
                              "' has a constant activation; nHSIC set to 0");
    } else {
      h.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = 1.0;
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(count * (count - 1) / 2);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = i + 1; j < count; ++j) pairs.emplace_back(i, j);
  }
  std::vector<double> results(pairs.size(), 0.0);
  parallel_for(pairs.size(), threads, [&](std::size_t p) {
    const auto [i, j] = pairs[p];
    results[p] = nhsic(layers[i], layers[j]).value;
  });
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto i = static_cast<Eigen::Index>(pairs[p].first);
    const auto j = static_cast<Eigen::Index>(pairs[p].second);
    h.values(i, j) = results[p];
    h.values(j, i) = results[p];
  }
  return h;
}

IndependenceMatrix build_independence_matrix(
    std::span<const ActivationMatrix> layers, const KernelSpec& kernel,
    unsigned threads) {
  std::vector<PreparedLayer> prepared(layers.size());
  std::vector<std::string> names;
  for (const auto& layer : layers) names.push_back(layer.layer_name);
  parallel_for(layers.size(), threads, [&](std::size_t i) {
    prepared[i] = PreparedLayer::prepare(layers[i], kernel);
  });
  return build_independence_matrix(prepared, names, threads);
}

IndependenceMatrix build_independence_matrix(
    const ActivationDump& dump, const KernelSpec& kernel, Pooling pooling,
    std::optional<std::int64_t> samples, unsigned threads) {
  const std::vector<std::string> names = dump.layer_names();
  if (samples && (*samples < 2 || *samples > dump.samples)) {
    throw Error(ErrorCode::InvalidArgument,
                "requested " + std::to_string(*samples) +
                    " samples but the dump holds " +
                    std::to_string(dump.samples));
  }
  std::vector<PreparedLayer> prepared(names.size());
  parallel_for(names.size(), threads, [&](std::size_t i) {
    ActivationMatrix raw = load_layer_raw(dump, names[i], pooling);
    if (samples && *samples < raw.samples()) raw = take_samples(raw, *samples);
    center_columns(raw);
    prepared[i] = PreparedLayer::prepare(raw, kernel);
  });
  return build_independence_matrix(prepared, names, threads);
}

ImportanceVector importance(const IndependenceMatrix& h, double beta) {
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw Error(ErrorCode::InvalidArgument, "beta must be a finite value >= 0");
  }
  ImportanceVector out;
  out.beta = beta;
  out.layer_names = h.layer_names;
  out.degenerate = h.degenerate;
  out.values.resize(h.size());
  for (Eigen::Index l = 0; l < h.size(); ++l) {
    double off_diagonal = 0.0;
    for (Eigen::Index j = 0; j < h.size(); ++j) {
      if (j != l) off_diagonal += h.values(l, j);
    }
    out.values(l) = std::exp(-beta * off_diagonal);
  }
  return out;
}

std::vector<ImportanceVector> importance_sweep(const IndependenceMatrix& h,
                                               std::span<const double> betas) {
  std::vector<ImportanceVector> out;
  out.reserve(betas.size());
  for (double beta : betas) out.push_back(importance(h, beta));
  return out;
}

double importance_variance(const ImportanceVector& importance) {
  if (importance.size() == 0) return 0.0;
  const double mean = importance.values.mean();
  return (importance.values.array() - mean).square().mean();
}

std::string independence_csv(const IndependenceMatrix& h) {
  std::ostringstream out;
  for (std::size_t i = 0; i < h.layer_names.size(); ++i) {
    out << (i ? "," : "") << h.layer_names[i];
  }
  out << '\n' << std::setprecision(9);
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    for (Eigen::Index j = 0; j < h.size(); ++j) {
      out << (j ? "," : "") << h.values(i, j);
    }
    out << '\n';
  }
  return out.str();
}

std::string importance_report_json(const IndependenceMatrix& h,
                                   const ImportanceVector& importance) {
  nlohmann::ordered_json report;
  report["layers"] = h.layer_names;
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index i = 0; i < h.size(); ++i) {
    std::vector<double> row(h.values.row(i).begin(), h.values.row(i).end());
    rows.push_back(row);
  }
  report["independence"] = rows;
  report["importance"] = std::vector<double>(importance.values.begin(),
                                             importance.values.end());
  report["beta"] = importance.beta;
  report["n"] = h.samples;
  auto degenerate = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < h.degenerate.size(); ++i) {
    if (h.degenerate[i]) degenerate.push_back(h.layer_names[i]);
  }
  report["degenerate"] = degenerate;
  return report.dump(2);
}

}  // namespace chanplan
