// SPDX-License-Identifier: Apache-2.0

#include "lrf/error.hpp"

namespace lrf {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
  case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
  case ErrorCode::kNonFinite: return "NonFinite";
  case ErrorCode::kConvergenceFailure: return "ConvergenceFailure";
  case ErrorCode::kNotSymmetric: return "NotSymmetric";
  case ErrorCode::kNotPositiveDefinite: return "NotPositiveDefinite";
  case ErrorCode::kAllSingular: return "AllSingular";
  case ErrorCode::kRatioOutOfRange: return "RatioOutOfRange";
  case ErrorCode::kInvalidRank: return "InvalidRank";
  case ErrorCode::kDegenerateGram: return "DegenerateGram";
  case ErrorCode::kGramNotInvertible: return "GramNotInvertible";
  case ErrorCode::kMissingGram: return "MissingGram";
  case ErrorCode::kInfeasibleBudget: return "InfeasibleBudget";
  case ErrorCode::kIoError: return "IoError";
  case ErrorCode::kManifestInvalid: return "ManifestInvalid";
  case ErrorCode::kCorruptBlob: return "CorruptBlob";
  case ErrorCode::kNonFiniteTensor: return "NonFiniteTensor";
  case ErrorCode::kUnsupportedVersion: return "UnsupportedVersion";
  case ErrorCode::kArtifactMismatch: return "ArtifactMismatch";
  case ErrorCode::kConfigError: return "ConfigError";
  }
  return "Unknown";
}

} // namespace lrf
