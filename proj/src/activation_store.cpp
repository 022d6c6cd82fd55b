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

#include "chanplan/activation_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

#include "chanplan/error.hpp"
#include "json.hpp"

namespace chanplan {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint32_t kMaxRank = 8;

void put_u32(std::ostream& out, std::uint32_t value) {
  const char bytes[4] = {static_cast<char>(value & 0xFF),
                         static_cast<char>((value >> 8) & 0xFF),
                         static_cast<char>((value >> 16) & 0xFF),
                         static_cast<char>((value >> 24) & 0xFF)};
  out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in, const fs::path& path) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
    throw Error(ErrorCode::Io, "truncated header in " + path.string());
  }
  return static_cast<std::uint32_t>(bytes[0]) |
         (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

std::ifstream open_input(const fs::path& path) {
  if (!fs::is_regular_file(path)) {
    throw Error(ErrorCode::MissingFile, path.string());
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return in;
}

TensorHeader parse_header(std::istream& in, const fs::path& path) {
  char magic[4];
  if (!in.read(magic, 4)) {
    throw Error(ErrorCode::MagicMismatch, "file too short: " + path.string());
  }
  if (std::memcmp(magic, kActivationMagic, 4) != 0) {
    throw Error(ErrorCode::MagicMismatch, path.string());
  }
  TensorHeader header;
  header.version = get_u32(in, path);
  if (header.version != kActivationFormatVersion) {
    throw Error(ErrorCode::Io, "unsupported format version " +
                                   std::to_string(header.version) + " in " +
                                   path.string());
  }
  const std::uint32_t rank = get_u32(in, path);
  if (rank < 1 || rank > kMaxRank) {
    throw Error(ErrorCode::Io,
                "bad rank " + std::to_string(rank) + " in " + path.string());
  }
  header.dims.resize(rank);
  for (auto& dim : header.dims) dim = get_u32(in, path);
  char dtype = 0;
  if (!in.read(&dtype, 1)) {
    throw Error(ErrorCode::Io, "truncated header in " + path.string());
  }
  header.dtype = static_cast<std::uint8_t>(dtype);
  if (header.dtype != kDtypeF32) {
    throw Error(ErrorCode::DtypeUnsupported,
                "dtype tag " + std::to_string(header.dtype) + " in " +
                    path.string());
  }
  return header;
}

float decode_f32(const unsigned char* p) {
  const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                             (static_cast<std::uint32_t>(p[1]) << 8) |
                             (static_cast<std::uint32_t>(p[2]) << 16) |
                             (static_cast<std::uint32_t>(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

std::vector<float> read_payload(std::istream& in, const TensorHeader& header,
                                const fs::path& path) {
  const std::uint64_t count = header.element_count();
  std::vector<unsigned char> raw(count * sizeof(float));
  if (!in.read(reinterpret_cast<char*>(raw.data()),
               static_cast<std::streamsize>(raw.size()))) {
    throw Error(ErrorCode::Io, "truncated payload in " + path.string());
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::Io, "trailing bytes in " + path.string());
  }
  std::vector<float> values(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    values[i] = decode_f32(raw.data() + 4 * i);
    if (!std::isfinite(values[i])) {
      throw Error(ErrorCode::NonFiniteData,
                  path.string() + " element " + std::to_string(i));
    }
  }
  return values;
}

std::vector<std::int64_t> parse_shape(const json& node,
                                      const std::string& layer) {
  if (!node.is_array() || node.empty()) {
    throw Error(ErrorCode::SchemaViolation,
                "layer '" + layer + "' needs a non-empty \"shape\" array");
  }
  std::vector<std::int64_t> shape;
  for (const auto& dim : node) {
    if (!dim.is_number_integer() || dim.get<std::int64_t>() < 1) {
      throw Error(ErrorCode::SchemaViolation,
                  "layer '" + layer + "' has a non-positive dimension");
    }
    shape.push_back(dim.get<std::int64_t>());
  }
  return shape;
}

}  // namespace

std::string_view to_string(Pooling pooling) noexcept {
  return pooling == Pooling::Flatten ? "flatten" : "spatial_mean";
}

Pooling parse_pooling(std::string_view text) {
  if (text == "flatten") return Pooling::Flatten;
  if (text == "spatial_mean") return Pooling::SpatialMean;
  throw Error(ErrorCode::InvalidArgument,
              "unknown pooling '" + std::string(text) + "'");
}

std::int64_t LayerEntry::features() const noexcept {
  std::int64_t total = 1;
  for (auto dim : shape) total *= dim;
  return total;
}

const LayerEntry& ActivationDump::layer(std::string_view name) const {
  for (const auto& entry : layers) {
    if (entry.name == name) return entry;
  }
  throw Error(ErrorCode::LayerNotFound, std::string(name));
}

bool ActivationDump::contains(std::string_view name) const noexcept {
  return std::any_of(layers.begin(), layers.end(),
                     [&](const LayerEntry& e) { return e.name == name; });
}

std::vector<std::string> ActivationDump::layer_names() const {
  std::vector<std::string> names;
  names.reserve(layers.size());
  for (const auto& entry : layers) names.push_back(entry.name);
  return names;
}

std::uint64_t TensorHeader::element_count() const noexcept {
  std::uint64_t count = 1;
  for (auto dim : dims) count *= dim;
  return count;
}

void write_layer(const fs::path& path, std::span<const std::uint32_t> dims,
                 std::span<const float> values) {
  if (dims.empty() || dims.size() > kMaxRank) {
    throw Error(ErrorCode::InvalidArgument, "rank must be in [1, 8]");
  }
  std::uint64_t count = 1;
  for (auto dim : dims) count *= dim;
  if (count != values.size()) {
    throw Error(ErrorCode::DimensionMismatch,
                "payload has " + std::to_string(values.size()) +
                    " values, dims imply " + std::to_string(count));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(kActivationMagic, 4);
  put_u32(out, kActivationFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (auto dim : dims) put_u32(out, dim);
  out.put(static_cast<char>(kDtypeF32));
  for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

TensorHeader read_layer_header(const fs::path& path) {
  auto in = open_input(path);
  return parse_header(in, path);
}

std::vector<float> read_layer(const fs::path& path, TensorHeader* header) {
  auto in = open_input(path);
  TensorHeader parsed = parse_header(in, path);
  auto values = read_payload(in, parsed, path);
  if (header != nullptr) *header = std::move(parsed);
  return values;
}

ActivationDump read_dump(const fs::path& manifest_path) {
  if (!fs::is_regular_file(manifest_path)) {
    throw Error(ErrorCode::MissingFile, manifest_path.string());
  }
  json manifest;
  try {
    std::ifstream in(manifest_path);
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::SchemaViolation,
                manifest_path.string() + ": " + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("n") ||
      !manifest["n"].is_number_integer() || !manifest.contains("layers") ||
      !manifest["layers"].is_array()) {
    throw Error(ErrorCode::SchemaViolation,
                "manifest needs integer \"n\" and array \"layers\"");
  }

  ActivationDump dump;
  dump.manifest_path = manifest_path;
  dump.samples = manifest["n"].get<std::int64_t>();
  if (dump.samples < 2) {
    throw Error(ErrorCode::DegenerateInput, "manifest n must be at least 2");
  }

  const fs::path base = manifest_path.parent_path();
  std::set<std::string> seen;
  for (const auto& node : manifest["layers"]) {
    if (!node.is_object() || !node.contains("name") ||
        !node["name"].is_string() || !node.contains("file") ||
        !node["file"].is_string()) {
      throw Error(ErrorCode::SchemaViolation,
                  "each layer needs string \"name\" and \"file\"");
    }
    LayerEntry entry;
    entry.name = node["name"].get<std::string>();
    if (!seen.insert(entry.name).second) {
      throw Error(ErrorCode::SchemaViolation,
                  "duplicate layer name '" + entry.name + "'");
    }
    entry.file = base / node["file"].get<std::string>();
    entry.shape = parse_shape(node.value("shape", json()), entry.name);

    TensorHeader header;
    read_layer(entry.file, &header);
    entry.samples = header.dims[0];
    if (entry.samples != dump.samples) {
      throw Error(ErrorCode::SampleCountMismatch,
                  "layer '" + entry.name + "' has n=" +
                      std::to_string(entry.samples) + ", manifest n=" +
                      std::to_string(dump.samples));
    }
    const bool shape_matches =
        header.dims.size() == entry.shape.size() + 1 &&
        std::equal(entry.shape.begin(), entry.shape.end(),
                   header.dims.begin() + 1,
                   [](std::int64_t a, std::uint32_t b) {
                     return a == static_cast<std::int64_t>(b);
                   });
    if (!shape_matches) {
      throw Error(ErrorCode::DimensionMismatch,
                  "layer '" + entry.name +
                      "' shape disagrees with its file header");
    }
    dump.layers.push_back(std::move(entry));
  }
  if (dump.layers.empty()) {
    throw Error(ErrorCode::SchemaViolation, "manifest lists no layers");
  }
  return dump;
}

ActivationMatrix load_layer_raw(const ActivationDump& dump,
                                std::string_view layer_name, Pooling pooling) {
  const LayerEntry& entry = dump.layer(layer_name);
  TensorHeader header;
  const std::vector<float> values = read_layer(entry.file, &header);
  if (static_cast<std::int64_t>(header.dims[0]) != dump.samples) {
    throw Error(ErrorCode::SampleCountMismatch, entry.file.string());
  }

  const Eigen::Index n = header.dims[0];
  const Eigen::Index per_sample = static_cast<Eigen::Index>(values.size()) / n;
  using RowMajor =
      Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMajor> flat(values.data(), n, per_sample);

  ActivationMatrix out;
  out.layer_name = entry.name;
  if (pooling == Pooling::Flatten || header.dims.size() <= 2) {
    out.data = flat;
    return out;
  }
  // Average everything after the channel axis.
  const Eigen::Index channels = header.dims[1];
  const Eigen::Index spatial = per_sample / channels;
  out.data.resize(n, channels);
  for (Eigen::Index s = 0; s < n; ++s) {
    for (Eigen::Index c = 0; c < channels; ++c) {
      double sum = 0.0;
      for (Eigen::Index p = 0; p < spatial; ++p) sum += flat(s, c * spatial + p);
      out.data(s, c) = static_cast<float>(sum / static_cast<double>(spatial));
    }
  }
  return out;
}

ActivationMatrix load_layer(const ActivationDump& dump,
                            std::string_view layer_name, Pooling pooling) {
  ActivationMatrix out = load_layer_raw(dump, layer_name, pooling);
  center_columns(out);
  return out;
}

void center_columns(ActivationMatrix& matrix) {
  auto& data = matrix.data;
  const double n = static_cast<double>(data.rows());
  for (Eigen::Index c = 0; c < data.cols(); ++c) {
    auto column = data.col(c);
    if (column.size() == 0) continue;
    if (column.minCoeff() == column.maxCoeff()) {
      column.setZero();
      continue;
    }
    double mean = 0.0;
    for (Eigen::Index r = 0; r < column.size(); ++r) mean += column(r);
    mean /= n;
    for (Eigen::Index r = 0; r < column.size(); ++r) {
      column(r) = static_cast<float>(static_cast<double>(column(r)) - mean);
    }
  }
  matrix.centered = true;
}

ActivationMatrix take_samples(const ActivationMatrix& matrix,
                              Eigen::Index samples) {
  if (samples < 2 || samples > matrix.samples()) {
    throw Error(ErrorCode::InvalidArgument,
                "cannot take " + std::to_string(samples) + " of " +
                    std::to_string(matrix.samples()) + " samples");
  }
  ActivationMatrix out;
  out.layer_name = matrix.layer_name;
  out.data = matrix.data.topRows(samples);
  out.centered = false;
  return out;
}

DumpWriter::DumpWriter(fs::path directory, std::int64_t samples)
    : directory_(std::move(directory)), samples_(samples) {
  if (samples_ < 2) {
    throw Error(ErrorCode::DegenerateInput, "dump needs at least 2 samples");
  }
  fs::create_directories(directory_);
}

void DumpWriter::add_layer(const std::string& name,
                           std::vector<std::int64_t> shape,
                           std::span<const float> values) {
  std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(samples_)};
  for (auto dim : shape) dims.push_back(static_cast<std::uint32_t>(dim));
  LayerEntry entry;
  entry.name = name;
  entry.file = name + ".itpa";
  entry.samples = samples_;
  entry.shape = std::move(shape);
  write_layer(directory_ / entry.file, dims, values);
  layers_.push_back(std::move(entry));
}

fs::path DumpWriter::finish(std::string_view manifest_name) {
  json manifest;
  manifest["n"] = samples_;
  manifest["layers"] = json::array();
  for (const auto& entry : layers_) {
    manifest["layers"].push_back({{"name", entry.name},
                                  {"file", entry.file.generic_string()},
                                  {"shape", entry.shape}});
  }
  const fs::path path = directory_ / std::string(manifest_name);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << manifest.dump(2) << '\n';
  return path;
}

}  // namespace chanplan
