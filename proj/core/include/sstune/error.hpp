// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sstune {

enum class ErrorCode {
  kZeroVector,
  kNonPositiveTemperature,
  kLengthMismatch,
  kKOutOfRange,
  kDimMismatch,
  kEmptySelection,
  kIndexOutOfRange,
  kIoFailure,
  kInvariantViolation,
  kSchemaMismatch,
  kShapeMismatch,
  kCorruptBlob,
  kMissingVideo,
  kFactorabilityViolation,
  kDegenerateClass,
  kNonFiniteLoss,
  kBundleInconsistency,
  kInvalidArgument,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace sstune
