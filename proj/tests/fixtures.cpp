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

#include "fixtures.hpp"

#include <fstream>
#include <random>
#include <vector>

#include <Eigen/Core>

#include "chanplan/activation_store.hpp"

namespace chanplan::testing {
namespace {

namespace fs = std::filesystem;

// Feature maps as a random linear read-out of an n x r latent plus noise.
std::vector<float> feature_maps(const Eigen::MatrixXd& latent,
                                std::int64_t features, double noise,
                                std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  const Eigen::Index n = latent.rows();
  Eigen::MatrixXd mixing(latent.cols(), features);
  for (Eigen::Index i = 0; i < mixing.size(); ++i) mixing.data()[i] = normal(rng);
  Eigen::MatrixXd maps = latent * mixing;
  for (Eigen::Index i = 0; i < maps.size(); ++i) {
    maps.data()[i] += noise * normal(rng);
  }
  // Row-major (n, features) on disk.
  std::vector<float> out(static_cast<std::size_t>(n * features));
  for (Eigen::Index s = 0; s < n; ++s) {
    for (Eigen::Index f = 0; f < features; ++f) {
      out[static_cast<std::size_t>(s * features + f)] =
          static_cast<float>(maps(s, f));
    }
  }
  return out;
}

Eigen::MatrixXd latent(std::int64_t samples, Eigen::Index rank,
                       std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd z(samples, rank);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = normal(rng);
  return z;
}

void write_topology(const fs::path& path, const NetworkDescription& net) {
  std::ofstream out(path, std::ios::trunc);
  out << network_to_json(net);
}

LayerSpec conv(std::string name, std::int64_t in, std::int64_t out,
               std::int64_t k, std::int64_t size, int group, int input_group) {
  LayerSpec spec;
  spec.name = std::move(name);
  spec.kind = LayerKind::Conv;
  spec.in_channels = in;
  spec.out_channels = out;
  spec.kernel = k;
  spec.out_h = spec.out_w = size;
  spec.group_id = group;
  spec.input_group_id = input_group;
  return spec;
}

std::vector<std::int64_t> shape_of(const LayerSpec& spec) {
  if (spec.kind == LayerKind::Linear) return {spec.out_channels};
  return {spec.out_channels, spec.out_h, spec.out_w};
}

}  // namespace

Fixture write_chain_fixture(const fs::path& dir, std::int64_t samples,
                            std::uint64_t seed) {
  fs::create_directories(dir);
  std::vector<LayerSpec> layers{
      conv("stem", 3, 16, 3, 8, 1, -1),
      conv("res_a", 16, 24, 3, 8, 2, 1),
      conv("res_b", 24, 16, 3, 8, 1, 2),
      conv("down", 16, 32, 3, 4, 3, 1),
      conv("dw", 32, 32, 3, 4, 3, 3),
      conv("pw", 32, 48, 1, 4, 4, 3),
  };
  layers[4].kind = LayerKind::DepthwiseConv;
  LayerSpec fc;
  fc.name = "fc";
  fc.kind = LayerKind::Linear;
  fc.in_channels = 48;
  fc.out_channels = 10;
  fc.group_id = 5;
  fc.input_group_id = 4;
  layers.push_back(fc);
  Fixture fixture;
  fixture.net = NetworkDescription::from_layers(layers, {5});

  std::mt19937_64 rng(seed);
  const Eigen::MatrixXd shared = latent(samples, 6, rng);
  DumpWriter writer(dir, samples);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    // Mix the shared latent with a private one so that layers differ in how
    // much they share with the rest.
    const Eigen::MatrixXd own = latent(samples, 6, rng);
    const double share = 0.2 + 0.12 * static_cast<double>(l);
    const Eigen::MatrixXd z = share * shared + (1.0 - share) * own;
    const auto shape = shape_of(layers[l]);
    std::int64_t features = 1;
    for (const auto d : shape) features *= d;
    const auto values = feature_maps(z, features, 0.3, rng);
    writer.add_layer(layers[l].name, shape, values);
  }
  fixture.manifest = writer.finish();
  fixture.topology = dir / "topology.json";
  write_topology(fixture.topology, fixture.net);
  return fixture;
}

Fixture write_downsample_fixture(const fs::path& dir, std::int64_t samples,
                                 std::uint64_t seed) {
  fs::create_directories(dir);
  std::vector<LayerSpec> layers;
  for (int l = 1; l <= 8; ++l) {
    const std::int64_t size = l < 5 ? 16 : 8;
    layers.push_back(conv("conv" + std::to_string(l), l == 1 ? 3 : 32, 32, 3,
                          size, l, l - 1 == 0 ? -1 : l - 1));
  }
  Fixture fixture;
  fixture.net = NetworkDescription::from_layers(layers);

  std::mt19937_64 rng(seed);
  const Eigen::MatrixXd shared = latent(samples, 4, rng);
  const Eigen::MatrixXd lone = latent(samples, 4, rng);
  DumpWriter writer(dir, samples);
  for (const auto& spec : layers) {
    const auto shape = shape_of(spec);
    const std::int64_t features = shape[0] * shape[1] * shape[2];
    const Eigen::MatrixXd& z = spec.name == kDownsampleLayer ? lone : shared;
    writer.add_layer(spec.name, shape, feature_maps(z, features, 0.3, rng));
  }
  fixture.manifest = writer.finish();
  fixture.topology = dir / "topology.json";
  write_topology(fixture.topology, fixture.net);
  return fixture;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("chanplan_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace chanplan::testing
