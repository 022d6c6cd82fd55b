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

#ifndef CHANPLAN_NET_MODEL_HPP
#define CHANPLAN_NET_MODEL_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace chanplan {

enum class LayerKind { Conv, DepthwiseConv, Linear };
enum class BudgetKind { Flops, Params };

std::string_view to_string(LayerKind kind) noexcept;
std::string_view to_string(BudgetKind kind) noexcept;
LayerKind parse_layer_kind(std::string_view text);
/// Rejects "latency" explicitly; only FLOPs and parameter counts are
/// quadratic in the channel ratios.
BudgetKind parse_budget_kind(std::string_view text);

/// One prunable layer. `group_id` is the channel-sharing group of the
/// layer's output; `input_group_id` the group feeding its input, or -1 for
/// the network input.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::int64_t in_channels = 1;
  std::int64_t out_channels = 1;
  std::int64_t kernel = 1;
  std::int64_t out_h = 1;
  std::int64_t out_w = 1;
  int group_id = 0;
  int input_group_id = -1;
};

/// Weight-tensor FLOPs or parameter count of the unpruned layer.
double layer_cost(const LayerSpec& layer, BudgetKind kind);

class NetworkDescription {
 public:
  NetworkDescription() = default;

  /// Validates and resolves the group graph.
  static NetworkDescription from_layers(std::vector<LayerSpec> layers,
                                        std::vector<int> non_prunable_groups = {});

  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const LayerSpec& layer(std::string_view name) const;

  /// Prunable groups in order of first appearance; position p maps to ratio
  /// index p + 1.
  const std::vector<int>& prunable_groups() const noexcept { return groups_; }
  const std::vector<int>& non_prunable_groups() const noexcept {
    return fixed_groups_;
  }
  std::size_t group_count() const noexcept { return groups_.size(); }
  bool is_prunable(int group_id) const;

  /// Index into the augmented ratio vector (1, a_1, ..., a_G). The network
  /// input and non-prunable groups map to 0.
  int ratio_index(int group_id) const;

  /// Output channel count shared by every member of the group.
  std::int64_t group_channels(int group_id) const;
  std::vector<std::string> members(int group_id) const;

 private:
  std::vector<LayerSpec> layers_;
  std::vector<int> groups_;
  std::vector<int> fixed_groups_;
  std::map<int, std::int64_t> channels_;
};

NetworkDescription parse_network(const std::filesystem::path& path);
NetworkDescription parse_network_json(std::string_view text);
std::string network_to_json(const NetworkDescription& net);

/// Cost as a quadratic form over the augmented ratio vector:
/// cost(a) = [1 a]^T T [1 a].
struct ConstraintForm {
  Eigen::MatrixXd t;
  BudgetKind kind = BudgetKind::Flops;
  double full_cost = 0.0;

  Eigen::Index groups() const noexcept { return t.rows() - 1; }
};

ConstraintForm constraint_form(const NetworkDescription& net, BudgetKind kind);

double evaluate_cost(const ConstraintForm& form,
                     const Eigen::Ref<const Eigen::VectorXd>& alpha);

/// Exact recount of a pruned network from its per-layer output channels.
/// Layers missing from `channels` keep their original width.
double count_cost(const NetworkDescription& net, BudgetKind kind,
                  const std::map<std::string, std::int64_t>& channels);

}  // namespace chanplan

#endif  // CHANPLAN_NET_MODEL_HPP
