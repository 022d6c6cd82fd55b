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

#ifndef CHANPLAN_ACTIVATION_STORE_HPP
#define CHANPLAN_ACTIVATION_STORE_HPP

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace chanplan {

// Layer activation files ("ITPA"), all integers little-endian:
//    magic        - 4 bytes, "ITPA"
//    version      - u32, currently 1
//    rank         - u32
//    dims         - rank x u32, dims[0] is the sample count n
//    dtype        - u8, 0 = f32
//    payload      - prod(dims) f32 values, row-major
//
// A JSON manifest ties the files together:
//    {"n": 64, "layers": [{"name": "conv1", "file": "conv1.itpa",
//                          "shape": [16, 32, 32]}, ...]}
// where "shape" excludes the leading sample dimension and "file" is relative
// to the manifest's directory.

inline constexpr char kActivationMagic[4] = {'I', 'T', 'P', 'A'};
inline constexpr std::uint32_t kActivationFormatVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

enum class Pooling { Flatten, SpatialMean };

std::string_view to_string(Pooling pooling) noexcept;
Pooling parse_pooling(std::string_view text);

struct LayerEntry {
  std::string name;
  std::filesystem::path file;
  std::int64_t samples = 0;
  std::vector<std::int64_t> shape;  // per-sample shape, without n

  std::int64_t features() const noexcept;
};

struct ActivationDump {
  std::filesystem::path manifest_path;
  std::int64_t samples = 0;
  std::vector<LayerEntry> layers;

  const LayerEntry& layer(std::string_view name) const;
  bool contains(std::string_view name) const noexcept;
  std::vector<std::string> layer_names() const;
};

/// Samples-by-features activations of a single layer.
struct ActivationMatrix {
  Eigen::MatrixXf data;
  std::string layer_name;
  bool centered = false;

  Eigen::Index samples() const noexcept { return data.rows(); }
  Eigen::Index features() const noexcept { return data.cols(); }
};

struct TensorHeader {
  std::uint32_t version = kActivationFormatVersion;
  std::vector<std::uint32_t> dims;
  std::uint8_t dtype = kDtypeF32;

  std::uint64_t element_count() const noexcept;
};

void write_layer(const std::filesystem::path& path,
                 std::span<const std::uint32_t> dims,
                 std::span<const float> values);

TensorHeader read_layer_header(const std::filesystem::path& path);

/// Reads and validates a whole layer file. Rejects non-finite payloads.
std::vector<float> read_layer(const std::filesystem::path& path,
                              TensorHeader* header = nullptr);

ActivationDump read_dump(const std::filesystem::path& manifest_path);

/// Pooled but uncentered activations, in float precision exactly as stored
/// when pooling is Flatten.
ActivationMatrix load_layer_raw(const ActivationDump& dump,
                                std::string_view layer_name,
                                Pooling pooling = Pooling::Flatten);

/// Pooled and column-centered activations.
ActivationMatrix load_layer(const ActivationDump& dump,
                            std::string_view layer_name,
                            Pooling pooling = Pooling::Flatten);

/// Subtracts each column's sample mean (accumulated in double). Columns whose
/// entries are all identical become exact zeros.
void center_columns(ActivationMatrix& matrix);

/// Keeps the first `samples` rows.
ActivationMatrix take_samples(const ActivationMatrix& matrix,
                              Eigen::Index samples);

/// Writes ITPA files plus the manifest into one directory.
class DumpWriter {
 public:
  DumpWriter(std::filesystem::path directory, std::int64_t samples);

  void add_layer(const std::string& name, std::vector<std::int64_t> shape,
                 std::span<const float> values);

  /// Writes the manifest and returns its path.
  std::filesystem::path finish(std::string_view manifest_name = "manifest.json");

 private:
  std::filesystem::path directory_;
  std::int64_t samples_;
  std::vector<LayerEntry> layers_;
};

}  // namespace chanplan

#endif  // CHANPLAN_ACTIVATION_STORE_HPP
