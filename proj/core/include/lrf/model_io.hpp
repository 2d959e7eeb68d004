// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lrf/allocation.hpp"
#include "lrf/calibration.hpp"
#include "lrf/engines.hpp"
#include "lrf/matrix.hpp"

namespace lrf {

// On-disk layout: `<stem>.json` manifest (UTF-8, sorted keys) next to
// `<stem>.bin`, the raw little-endian IEEE-754 doubles of every tensor,
// row-major, concatenated in tensor_index order.

enum class ArtifactKind { kModel, kGrams, kPlan, kCompressedModel, kCalibration };

std::string_view to_string(ArtifactKind k) noexcept;
std::optional<ArtifactKind> parse_artifact_kind(std::string_view s) noexcept;

struct TensorEntry {
  std::string name;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::uint64_t byte_offset = 0;
  std::uint64_t byte_length = 0;

  bool operator==(const TensorEntry &) const = default;
};

struct ArtifactManifest {
  std::string format_version = "1";
  ArtifactKind kind = ArtifactKind::kModel;
  std::vector<TensorEntry> tensor_index;
  std::map<std::string, std::string> metadata;

  bool operator==(const ArtifactManifest &) const = default;
};

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct Artifact {
  ArtifactManifest manifest;
  std::vector<NamedTensor> tensors;

  const Matrix *tensor(std::string_view name) const noexcept;
};

/// Lays the tensors out back to back and records their byte ranges.
ArtifactManifest make_manifest(ArtifactKind kind, const std::vector<NamedTensor> &tensors,
                               std::map<std::string, std::string> metadata = {});

/// Checks version, byte_length = rows·cols·8, and ascending non-overlapping
/// ranges inside `blob_size`. Throws kManifestInvalid / kUnsupportedVersion.
void validate_manifest(const ArtifactManifest &manifest, std::uint64_t blob_size);

std::uint64_t payload_bytes(const ArtifactManifest &manifest) noexcept;

nlohmann::json manifest_to_json(const ArtifactManifest &manifest);
ArtifactManifest manifest_from_json(const nlohmann::json &j);

std::vector<std::uint8_t> encode_blob(const ArtifactManifest &manifest,
                                      const std::vector<NamedTensor> &tensors);

/// Path of the blob that accompanies a manifest path.
std::filesystem::path blob_path_for(const std::filesystem::path &manifest_path);

/// Writes manifest + blob atomically (temp file, then rename).
void save(const ArtifactManifest &manifest, const std::vector<NamedTensor> &tensors,
          const std::filesystem::path &manifest_path);

/// Reads and validates. kCorruptBlob on length mismatch, kNonFiniteTensor on
/// NaN/Inf in model payloads.
Artifact load(const std::filesystem::path &manifest_path);

/// a·b; evaluation only, storage keeps the two factors.
Matrix densify(const LowRankFactors &factors);

// -- domain artifacts ----------------------------------------------------

Artifact model_to_artifact(const ToyModel &model, std::map<std::string, std::string> metadata = {});
ToyModel model_from_artifact(const Artifact &artifact);

Artifact grams_to_artifact(const std::vector<GramAccumulator> &grams, bool normalized);
std::vector<GramAccumulator> grams_from_artifact(const Artifact &artifact);

/// One site of a compressed model: factors, or the untouched dense weight when
/// its engine failed.
struct CompressedSite {
  std::string site_id;
  int layer_index = 0;
  MatrixType matrix_type = MatrixType::kDense;
  std::optional<LowRankFactors> factors;
  Matrix dense;
  std::string engine;
  bool refined = false;
  std::string failure;
};

struct CompressedModel {
  Activation activation = Activation::kIdentity;
  std::vector<CompressedSite> sites; ///< chain order

  ToyModel to_dense() const;
};

Artifact compressed_to_artifact(const CompressedModel &model,
                                std::map<std::string, std::string> metadata = {});
CompressedModel compressed_from_artifact(const Artifact &artifact);

nlohmann::json plan_to_json(const CompressionPlan &plan);
CompressionPlan plan_from_json(const nlohmann::json &j);
void save_plan(const CompressionPlan &plan, const std::filesystem::path &path);
CompressionPlan load_plan(const std::filesystem::path &path);

/// Writes text atomically (temp file + rename). Throws kIoError.
void write_text_atomic(const std::filesystem::path &path, const std::string &text);
std::string read_text(const std::filesystem::path &path);

/// Shortest round-trip decimal form of a double (locale independent).
std::string format_double(double v);

} // namespace lrf
