// SPDX-License-Identifier: Apache-2.0
#include "sstune/error.hpp"

namespace sstune {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kZeroVector: return "ZeroVector";
    case ErrorCode::kNonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kKOutOfRange: return "KOutOfRange";
    case ErrorCode::kDimMismatch: return "DimMismatch";
    case ErrorCode::kEmptySelection: return "EmptySelection";
    case ErrorCode::kIndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kInvariantViolation: return "InvariantViolation";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kCorruptBlob: return "CorruptBlob";
    case ErrorCode::kMissingVideo: return "MissingVideo";
    case ErrorCode::kFactorabilityViolation: return "FactorabilityViolation";
    case ErrorCode::kDegenerateClass: return "DegenerateClass";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kBundleInconsistency: return "BundleInconsistency";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace sstune
