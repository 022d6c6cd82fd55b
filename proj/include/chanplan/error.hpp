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

#ifndef CHANPLAN_ERROR_HPP
#define CHANPLAN_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace chanplan {

enum class ErrorCode {
  MissingFile,
  MagicMismatch,
  SampleCountMismatch,
  DtypeUnsupported,
  NonFiniteData,
  LayerNotFound,
  DegenerateInput,
  DimensionMismatch,
  NotPositiveDefinite,
  SchemaViolation,
  DanglingGroup,
  DepthwiseGroupMismatch,
  InfeasibleBudget,
  UnmappedLayer,
  RepairFailed,
  InvalidArgument,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it onto a stable exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MagicMismatch: return "MagicMismatch";
    case ErrorCode::SampleCountMismatch: return "SampleCountMismatch";
    case ErrorCode::DtypeUnsupported: return "DtypeUnsupported";
    case ErrorCode::NonFiniteData: return "NonFiniteData";
    case ErrorCode::LayerNotFound: return "LayerNotFound";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::DanglingGroup: return "DanglingGroup";
    case ErrorCode::DepthwiseGroupMismatch: return "DepthwiseGroupMismatch";
    case ErrorCode::InfeasibleBudget: return "InfeasibleBudget";
    case ErrorCode::UnmappedLayer: return "UnmappedLayer";
    case ErrorCode::RepairFailed: return "RepairFailed";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace chanplan

#endif  // CHANPLAN_ERROR_HPP
