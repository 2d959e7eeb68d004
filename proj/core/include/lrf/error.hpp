// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lrf {

enum class ErrorCode {
  kDimensionMismatch,
  kNonFinite,
  kConvergenceFailure,
  kNotSymmetric,
  kNotPositiveDefinite,
  kAllSingular,
  kRatioOutOfRange,
  kInvalidRank,
  kDegenerateGram,
  kGramNotInvertible,
  kMissingGram,
  kInfeasibleBudget,
  kIoError,
  kManifestInvalid,
  kCorruptBlob,
  kNonFiniteTensor,
  kUnsupportedVersion,
  kArtifactMismatch,
  kConfigError,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string &what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

} // namespace lrf
