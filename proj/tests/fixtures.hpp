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

// Synthetic activation dumps and topologies for the test suites.

#ifndef CHANPLAN_TESTS_FIXTURES_HPP
#define CHANPLAN_TESTS_FIXTURES_HPP

#include <cstdint>
#include <filesystem>
#include <string>

#include "chanplan/net_model.hpp"

namespace chanplan::testing {

struct Fixture {
  std::filesystem::path manifest;
  std::filesystem::path topology;
  NetworkDescription net;
};

/// Seven layers: stem, a residual pair sharing the stem's group, a stride-2
/// conv followed by a depthwise conv in the same group, a pointwise conv and
/// an unpruned classifier.
Fixture write_chain_fixture(const std::filesystem::path& dir,
                            std::int64_t samples = 64, std::uint64_t seed = 7);

/// Eight-conv chain. All layers read one shared low-rank latent except the
/// stride-2 layer, which reads its own.
Fixture write_downsample_fixture(const std::filesystem::path& dir,
                                 std::int64_t samples = 128,
                                 std::uint64_t seed = 11);
inline constexpr const char* kDownsampleLayer = "conv5";

/// Fresh empty directory under the system temp directory.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace chanplan::testing

#endif  // CHANPLAN_TESTS_FIXTURES_HPP
