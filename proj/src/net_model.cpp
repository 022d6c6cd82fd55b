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

#include "chanplan/net_model.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "chanplan/error.hpp"
#include "json.hpp"

namespace chanplan {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::int64_t spatial(const LayerSpec& layer) {
  return layer.kind == LayerKind::Linear ? 1 : layer.out_h * layer.out_w;
}

std::int64_t kernel_area(const LayerSpec& layer) {
  return layer.kind == LayerKind::Linear ? 1 : layer.kernel * layer.kernel;
}

std::int64_t require_int(const json& node, const char* key,
                         const std::string& layer, std::int64_t fallback,
                         bool required) {
  if (!node.contains(key)) {
    if (required) {
      throw Error(ErrorCode::SchemaViolation,
                  "layer '" + layer + "' is missing \"" + key + "\"");
    }
    return fallback;
  }
  if (!node[key].is_number_integer()) {
    throw Error(ErrorCode::SchemaViolation,
                "layer '" + layer + "': \"" + key + "\" must be an integer");
  }
  return node[key].get<std::int64_t>();
}

}  // namespace

std::string_view to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::DepthwiseConv: return "depthwise_conv";
    case LayerKind::Linear: return "linear";
  }
  return "conv";
}

std::string_view to_string(BudgetKind kind) noexcept {
  return kind == BudgetKind::Flops ? "flops" : "params";
}

LayerKind parse_layer_kind(std::string_view text) {
  if (text == "conv") return LayerKind::Conv;
  if (text == "depthwise_conv") return LayerKind::DepthwiseConv;
  if (text == "linear") return LayerKind::Linear;
  throw Error(ErrorCode::SchemaViolation,
              "unknown layer kind '" + std::string(text) + "'");
}

BudgetKind parse_budget_kind(std::string_view text) {
  if (text == "flops") return BudgetKind::Flops;
  if (text == "params") return BudgetKind::Params;
  if (text == "latency") {
    throw Error(ErrorCode::InvalidArgument,
                "latency budgets are not supported: a latency lookup table is "
                "not a quadratic form in the channel ratios; use flops or "
                "params");
  }
  throw Error(ErrorCode::InvalidArgument,
              "unknown budget kind '" + std::string(text) + "'");
}

double layer_cost(const LayerSpec& layer, BudgetKind kind) {
  const std::int64_t area = kernel_area(layer);
  const std::int64_t positions = kind == BudgetKind::Flops ? spatial(layer) : 1;
  if (layer.kind == LayerKind::DepthwiseConv) {
    return static_cast<double>(layer.out_channels * area * positions);
  }
  return static_cast<double>(layer.out_channels * layer.in_channels * area *
                             positions);
}

NetworkDescription NetworkDescription::from_layers(
    std::vector<LayerSpec> layers, std::vector<int> non_prunable_groups) {
  if (layers.empty()) {
    throw Error(ErrorCode::SchemaViolation, "topology lists no layers");
  }
  NetworkDescription net;
  std::set<std::string> names;
  std::vector<int> produced;
  for (const auto& layer : layers) {
    if (layer.name.empty() || !names.insert(layer.name).second) {
      throw Error(ErrorCode::SchemaViolation,
                  "layer names must be unique and non-empty ('" + layer.name +
                      "')");
    }
    if (layer.in_channels < 1 || layer.out_channels < 1 || layer.kernel < 1 ||
        layer.out_h < 1 || layer.out_w < 1) {
      throw Error(ErrorCode::SchemaViolation,
                  "layer '" + layer.name + "' has a non-positive size");
    }
    if (layer.group_id < 0 || layer.input_group_id < -1) {
      throw Error(ErrorCode::SchemaViolation,
                  "layer '" + layer.name + "' has an invalid group id");
    }
    if (layer.kind == LayerKind::DepthwiseConv &&
        (layer.group_id != layer.input_group_id ||
         layer.in_channels != layer.out_channels)) {
      throw Error(ErrorCode::DepthwiseGroupMismatch,
                  "depthwise layer '" + layer.name +
                      "' must keep its input group and channel count");
    }
    auto [it, inserted] =
        net.channels_.emplace(layer.group_id, layer.out_channels);
    if (!inserted && it->second != layer.out_channels) {
      throw Error(ErrorCode::SchemaViolation,
                  "group " + std::to_string(layer.group_id) +
                      " mixes output widths (layer '" + layer.name + "')");
    }
    if (inserted) produced.push_back(layer.group_id);
  }
  for (const auto& layer : layers) {
    if (layer.input_group_id != -1 &&
        !net.channels_.contains(layer.input_group_id)) {
      throw Error(ErrorCode::DanglingGroup,
                  "layer '" + layer.name + "' reads group " +
                      std::to_string(layer.input_group_id) +
                      " which no layer produces");
    }
  }
  std::sort(non_prunable_groups.begin(), non_prunable_groups.end());
  non_prunable_groups.erase(
      std::unique(non_prunable_groups.begin(), non_prunable_groups.end()),
      non_prunable_groups.end());
  for (int group : non_prunable_groups) {
    if (!net.channels_.contains(group)) {
      throw Error(ErrorCode::DanglingGroup,
                  "non-prunable group " + std::to_string(group) +
                      " has no layers");
    }
  }
  net.fixed_groups_ = std::move(non_prunable_groups);
  for (int group : produced) {
    if (!std::binary_search(net.fixed_groups_.begin(), net.fixed_groups_.end(),
                            group)) {
      net.groups_.push_back(group);
    }
  }
  net.layers_ = std::move(layers);
  return net;
}

const LayerSpec& NetworkDescription::layer(std::string_view name) const {
  for (const auto& spec : layers_) {
    if (spec.name == name) return spec;
  }
  throw Error(ErrorCode::LayerNotFound, std::string(name));
}

bool NetworkDescription::is_prunable(int group_id) const {
  return std::find(groups_.begin(), groups_.end(), group_id) != groups_.end();
}

int NetworkDescription::ratio_index(int group_id) const {
  const auto it = std::find(groups_.begin(), groups_.end(), group_id);
  return it == groups_.end() ? 0 : static_cast<int>(it - groups_.begin()) + 1;
}

std::int64_t NetworkDescription::group_channels(int group_id) const {
  const auto it = channels_.find(group_id);
  if (it == channels_.end()) {
    throw Error(ErrorCode::DanglingGroup,
                "unknown group " + std::to_string(group_id));
  }
  return it->second;
}

std::vector<std::string> NetworkDescription::members(int group_id) const {
  std::vector<std::string> out;
  for (const auto& spec : layers_) {
    if (spec.group_id == group_id) out.push_back(spec.name);
  }
  return out;
}

NetworkDescription parse_network_json(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation, e.what());
  }
  if (!doc.is_object() || !doc.contains("layers") || !doc["layers"].is_array()) {
    throw Error(ErrorCode::SchemaViolation, "topology needs a \"layers\" array");
  }
  std::vector<LayerSpec> layers;
  for (const auto& node : doc["layers"]) {
    if (!node.is_object() || !node.contains("name") ||
        !node["name"].is_string() || !node.contains("kind") ||
        !node["kind"].is_string()) {
      throw Error(ErrorCode::SchemaViolation,
                  "each layer needs string \"name\" and \"kind\"");
    }
    LayerSpec spec;
    spec.name = node["name"].get<std::string>();
    spec.kind = parse_layer_kind(node["kind"].get<std::string>());
    const bool spatial_layer = spec.kind != LayerKind::Linear;
    spec.in_channels = require_int(node, "in", spec.name, 0, true);
    spec.out_channels = require_int(node, "out", spec.name, 0, true);
    spec.kernel = require_int(node, "k", spec.name, 1, spatial_layer);
    spec.out_h = require_int(node, "out_h", spec.name, 1, spatial_layer);
    spec.out_w = require_int(node, "out_w", spec.name, 1, spatial_layer);
    spec.group_id =
        static_cast<int>(require_int(node, "group", spec.name, 0, true));
    spec.input_group_id =
        static_cast<int>(require_int(node, "input_group", spec.name, -1, false));
    layers.push_back(std::move(spec));
  }
  std::vector<int> fixed;
  if (doc.contains("non_prunable_groups")) {
    const auto& node = doc["non_prunable_groups"];
    if (!node.is_array()) {
      throw Error(ErrorCode::SchemaViolation,
                  "\"non_prunable_groups\" must be an array of integers");
    }
    for (const auto& group : node) {
      if (!group.is_number_integer()) {
        throw Error(ErrorCode::SchemaViolation,
                    "\"non_prunable_groups\" must be an array of integers");
      }
      fixed.push_back(group.get<int>());
    }
  }
  return NetworkDescription::from_layers(std::move(layers), std::move(fixed));
}

NetworkDescription parse_network(const fs::path& path) {
  if (!fs::is_regular_file(path)) {
    throw Error(ErrorCode::MissingFile, path.string());
  }
  std::ifstream in(path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_network_json(buffer.str());
}

std::string network_to_json(const NetworkDescription& net) {
  nlohmann::ordered_json doc;
  doc["layers"] = nlohmann::ordered_json::array();
  for (const auto& spec : net.layers()) {
    doc["layers"].push_back({{"name", spec.name},
                             {"kind", std::string(to_string(spec.kind))},
                             {"in", spec.in_channels},
                             {"out", spec.out_channels},
                             {"k", spec.kernel},
                             {"out_h", spec.out_h},
                             {"out_w", spec.out_w},
                             {"group", spec.group_id},
                             {"input_group", spec.input_group_id}});
  }
  doc["non_prunable_groups"] = net.non_prunable_groups();
  return doc.dump(2);
}

ConstraintForm constraint_form(const NetworkDescription& net, BudgetKind kind) {
  const auto size = static_cast<Eigen::Index>(net.group_count() + 1);
  ConstraintForm form;
  form.kind = kind;
  form.t = Eigen::MatrixXd::Zero(size, size);
  for (const auto& spec : net.layers()) {
    const double cost = layer_cost(spec, kind);
    const int out = net.ratio_index(spec.group_id);
    // Depthwise cost is linear in its single ratio, so it pairs with the
    // constant entry.
    const int in = spec.kind == LayerKind::DepthwiseConv
                       ? 0
                       : (spec.input_group_id < 0
                              ? 0
                              : net.ratio_index(spec.input_group_id));
    form.t(in, out) += 0.5 * cost;
    form.t(out, in) += 0.5 * cost;
    form.full_cost += cost;
  }
  return form;
}

double evaluate_cost(const ConstraintForm& form,
                     const Eigen::Ref<const Eigen::VectorXd>& alpha) {
  if (alpha.size() != form.groups()) {
    throw Error(ErrorCode::DimensionMismatch,
                "ratio vector has " + std::to_string(alpha.size()) +
                    " entries, form expects " + std::to_string(form.groups()));
  }
  Eigen::VectorXd augmented(alpha.size() + 1);
  augmented << 1.0, alpha;
  return augmented.dot(form.t * augmented);
}

double count_cost(const NetworkDescription& net, BudgetKind kind,
                  const std::map<std::string, std::int64_t>& channels) {
  auto kept = [&](const LayerSpec& spec) {
    const auto it = channels.find(spec.name);
    return it == channels.end() ? spec.out_channels : it->second;
  };
  auto kept_group = [&](int group) {
    for (const auto& spec : net.layers()) {
      if (spec.group_id == group) return kept(spec);
    }
    throw Error(ErrorCode::DanglingGroup, std::to_string(group));
  };

  double total = 0.0;
  for (const auto& spec : net.layers()) {
    const std::int64_t out = kept(spec);
    const std::int64_t area = spec.kind == LayerKind::Linear
                                  ? 1
                                  : spec.kernel * spec.kernel;
    const std::int64_t positions =
        kind == BudgetKind::Flops && spec.kind != LayerKind::Linear
            ? spec.out_h * spec.out_w
            : 1;
    if (spec.kind == LayerKind::DepthwiseConv) {
      total += static_cast<double>(out * area * positions);
      continue;
    }
    if (spec.input_group_id < 0) {
      total += static_cast<double>(out * spec.in_channels * area * positions);
      continue;
    }
    // Input width scales with the producing group's kept fraction.
    const std::int64_t original = net.group_channels(spec.input_group_id);
    const std::int64_t numerator = out * spec.in_channels *
                                   kept_group(spec.input_group_id) * area *
                                   positions;
    if (numerator % original == 0) {
      total += static_cast<double>(numerator / original);
    } else {
      total += static_cast<double>(numerator) / static_cast<double>(original);
    }
  }
  return total;
}

}  // namespace chanplan
