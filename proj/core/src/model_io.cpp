// SPDX-License-Identifier: Apache-2.0

#include "lrf/model_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "lrf/error.hpp"

namespace lrf {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::pair<ArtifactKind, std::string_view> kKindNames[] = {
    {ArtifactKind::kModel, "model"},
    {ArtifactKind::kGrams, "grams"},
    {ArtifactKind::kPlan, "plan"},
    {ArtifactKind::kCompressedModel, "compressed_model"},
    {ArtifactKind::kCalibration, "calibration"},
};

[[noreturn]] void invalid(const std::string &what) {
  throw Error(ErrorCode::kManifestInvalid, what);
}

std::string site_key(const std::string &site_id, const char *field) {
  return "site." + site_id + "." + field;
}

const std::string &require_meta(const ArtifactManifest &m, const std::string &key) {
  auto it = m.metadata.find(key);
  if (it == m.metadata.end())
    throw Error(ErrorCode::kArtifactMismatch, "artifact metadata lacks " + key);
  return it->second;
}

int parse_int(const std::string &s, const std::string &what) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorCode::kArtifactMismatch, what + " is not an integer: " + s);
  return v;
}

MatrixType require_type(const std::string &s) {
  auto t = parse_matrix_type(s);
  if (!t)
    throw Error(ErrorCode::kArtifactMismatch, "unknown matrix type " + s);
  return *t;
}

void expect_kind(const Artifact &a, ArtifactKind kind) {
  if (a.manifest.kind != kind)
    throw Error(ErrorCode::kArtifactMismatch, "expected a " + std::string(to_string(kind)) +
                                                  " artifact, got " +
                                                  std::string(to_string(a.manifest.kind)));
}

} // namespace

std::string_view to_string(ArtifactKind k) noexcept {
  for (const auto &[kind, name] : kKindNames)
    if (kind == k)
      return name;
  return "model";
}

std::optional<ArtifactKind> parse_artifact_kind(std::string_view s) noexcept {
  for (const auto &[kind, name] : kKindNames)
    if (name == s)
      return kind;
  return std::nullopt;
}

const Matrix *Artifact::tensor(std::string_view name) const noexcept {
  for (const auto &t : tensors)
    if (t.name == name)
      return &t.value;
  return nullptr;
}

ArtifactManifest make_manifest(ArtifactKind kind, const std::vector<NamedTensor> &tensors,
                               std::map<std::string, std::string> metadata) {
  ArtifactManifest m;
  m.kind = kind;
  m.metadata = std::move(metadata);
  std::uint64_t offset = 0;
  for (const auto &t : tensors) {
    TensorEntry e;
    e.name = t.name;
    e.rows = t.value.rows();
    e.cols = t.value.cols();
    e.byte_offset = offset;
    e.byte_length = static_cast<std::uint64_t>(e.rows * e.cols) * sizeof(double);
    offset += e.byte_length;
    m.tensor_index.push_back(std::move(e));
  }
  return m;
}

std::uint64_t payload_bytes(const ArtifactManifest &manifest) noexcept {
  std::uint64_t end = 0;
  for (const auto &e : manifest.tensor_index)
    end = std::max(end, e.byte_offset + e.byte_length);
  return end;
}

void validate_manifest(const ArtifactManifest &manifest, std::uint64_t blob_size) {
  if (manifest.format_version != "1")
    throw Error(ErrorCode::kUnsupportedVersion, "format_version " + manifest.format_version);
  std::set<std::string> names;
  std::uint64_t cursor = 0;
  for (const auto &e : manifest.tensor_index) {
    if (!names.insert(e.name).second)
      invalid("duplicate tensor name " + e.name);
    if (e.rows <= 0 || e.cols <= 0)
      invalid("tensor " + e.name + " has non-positive shape");
    if (e.byte_length != static_cast<std::uint64_t>(e.rows * e.cols) * sizeof(double))
      invalid("tensor " + e.name + " byte_length != rows*cols*8");
    if (e.byte_offset < cursor)
      invalid("tensor " + e.name + " overlaps or is out of order");
    cursor = e.byte_offset + e.byte_length;
    if (cursor > blob_size)
      invalid("tensor " + e.name + " extends past the blob");
  }
}

json manifest_to_json(const ArtifactManifest &manifest) {
  json index = json::array();
  for (const auto &e : manifest.tensor_index)
    index.push_back({{"name", e.name},
                     {"rows", e.rows},
                     {"cols", e.cols},
                     {"byte_offset", e.byte_offset},
                     {"byte_length", e.byte_length}});
  return {{"format_version", manifest.format_version},
          {"kind", to_string(manifest.kind)},
          {"tensor_index", std::move(index)},
          {"metadata", manifest.metadata}};
}

ArtifactManifest manifest_from_json(const json &j) {
  try {
    ArtifactManifest m;
    m.format_version = j.at("format_version").get<std::string>();
    if (m.format_version != "1")
      throw Error(ErrorCode::kUnsupportedVersion, "format_version " + m.format_version);
    const auto kind = parse_artifact_kind(j.at("kind").get<std::string>());
    if (!kind)
      invalid("unknown kind " + j.at("kind").dump());
    m.kind = *kind;
    for (const auto &e : j.at("tensor_index")) {
      TensorEntry t;
      t.name = e.at("name").get<std::string>();
      t.rows = e.at("rows").get<std::int64_t>();
      t.cols = e.at("cols").get<std::int64_t>();
      t.byte_offset = e.at("byte_offset").get<std::uint64_t>();
      t.byte_length = e.at("byte_length").get<std::uint64_t>();
      m.tensor_index.push_back(std::move(t));
    }
    if (j.contains("metadata"))
      m.metadata = j.at("metadata").get<std::map<std::string, std::string>>();
    return m;
  } catch (const json::exception &e) {
    invalid(std::string("malformed manifest: ") + e.what());
  }
}

std::vector<std::uint8_t> encode_blob(const ArtifactManifest &manifest,
                                      const std::vector<NamedTensor> &tensors) {
  if (manifest.tensor_index.size() != tensors.size())
    invalid("tensor_index does not match the tensor list");
  std::vector<std::uint8_t> blob(payload_bytes(manifest), 0);
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    const auto &e = manifest.tensor_index[t];
    const auto &v = tensors[t].value;
    if (e.name != tensors[t].name || e.rows != v.rows() || e.cols != v.cols())
      invalid("tensor " + tensors[t].name + " does not match its index entry");
    std::uint8_t *out = blob.data() + e.byte_offset;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(v.data()[i]);
      for (int b = 0; b < 8; ++b)
        *out++ = static_cast<std::uint8_t>(bits >> (8 * b));
    }
  }
  return blob;
}

fs::path blob_path_for(const fs::path &manifest_path) {
  fs::path p = manifest_path;
  p.replace_extension(".bin");
  return p;
}

namespace {

void write_bytes_atomic(const fs::path &path, const char *data, std::size_t size) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw Error(ErrorCode::kIoError, "cannot open " + tmp.string() + " for writing");
    out.write(data, static_cast<std::streamsize>(size));
    if (!out)
      throw Error(ErrorCode::kIoError, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec)
    throw Error(ErrorCode::kIoError, "rename " + tmp.string() + ": " + ec.message());
}

std::vector<std::uint8_t> read_bytes(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

void write_text_atomic(const fs::path &path, const std::string &text) {
  write_bytes_atomic(path, text.data(), text.size());
}

std::string read_text(const fs::path &path) {
  const auto bytes = read_bytes(path);
  return {bytes.begin(), bytes.end()};
}

void save(const ArtifactManifest &manifest, const std::vector<NamedTensor> &tensors,
          const fs::path &manifest_path) {
  const auto blob = encode_blob(manifest, tensors);
  validate_manifest(manifest, blob.size());
  const fs::path blob_path = blob_path_for(manifest_path);
  if (blob_path == manifest_path)
    throw Error(ErrorCode::kIoError, "manifest path must not end in .bin");

  json j = manifest_to_json(manifest);
  j["blob"] = blob_path.filename().string();
  j["blob_bytes"] = blob.size();

  write_bytes_atomic(blob_path, reinterpret_cast<const char *>(blob.data()), blob.size());
  write_text_atomic(manifest_path, j.dump(2) + "\n");
}

Artifact load(const fs::path &manifest_path) {
  json j;
  try {
    j = json::parse(read_text(manifest_path));
  } catch (const json::parse_error &e) {
    invalid(manifest_path.string() + ": " + e.what());
  }
  Artifact art;
  art.manifest = manifest_from_json(j);

  fs::path blob_path = blob_path_for(manifest_path);
  if (j.contains("blob"))
    blob_path = manifest_path.parent_path() / j.at("blob").get<std::string>();
  const auto blob = read_bytes(blob_path);
  const std::uint64_t expected =
      j.contains("blob_bytes") ? j.at("blob_bytes").get<std::uint64_t>() : payload_bytes(art.manifest);
  if (blob.size() != expected)
    throw Error(ErrorCode::kCorruptBlob, blob_path.string() + " holds " +
                                             std::to_string(blob.size()) + " bytes, expected " +
                                             std::to_string(expected));
  validate_manifest(art.manifest, blob.size());

  for (const auto &e : art.manifest.tensor_index) {
    Matrix m(e.rows, e.cols);
    const std::uint8_t *in = blob.data() + e.byte_offset;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b)
        bits |= static_cast<std::uint64_t>(*in++) << (8 * b);
      m.data()[i] = std::bit_cast<double>(bits);
    }
    if (art.manifest.kind == ArtifactKind::kModel && !all_finite(m))
      throw Error(ErrorCode::kNonFiniteTensor, "tensor " + e.name + " holds NaN/Inf");
    art.tensors.push_back({e.name, std::move(m)});
  }
  return art;
}

Matrix densify(const LowRankFactors &factors) {
  require_dims(factors.a.cols() == factors.b.rows(), "densify: inner dimensions differ");
  return factors.a * factors.b;
}

// -- domain artifacts ----------------------------------------------------

Artifact model_to_artifact(const ToyModel &model, std::map<std::string, std::string> metadata) {
  Artifact art;
  metadata["activation"] = std::string(to_string(model.activation()));
  for (const auto &site : model.layers()) {
    metadata[site_key(site.site_id, "layer")] = std::to_string(site.layer_index);
    metadata[site_key(site.site_id, "type")] = std::string(to_string(site.matrix_type));
    art.tensors.push_back({site.site_id, site.weight});
  }
  art.manifest = make_manifest(ArtifactKind::kModel, art.tensors, std::move(metadata));
  return art;
}

ToyModel model_from_artifact(const Artifact &artifact) {
  expect_kind(artifact, ArtifactKind::kModel);
  const auto act = parse_activation(require_meta(artifact.manifest, "activation"));
  if (!act)
    throw Error(ErrorCode::kArtifactMismatch, "unknown activation");
  std::vector<WeightSite> sites;
  for (const auto &t : artifact.tensors) {
    WeightSite s;
    s.site_id = t.name;
    s.layer_index = parse_int(require_meta(artifact.manifest, site_key(t.name, "layer")), "layer");
    s.matrix_type = require_type(require_meta(artifact.manifest, site_key(t.name, "type")));
    s.weight = t.value;
    sites.push_back(std::move(s));
  }
  return ToyModel(std::move(sites), *act);
}

Artifact grams_to_artifact(const std::vector<GramAccumulator> &grams, bool normalized) {
  Artifact art;
  std::map<std::string, std::string> metadata;
  metadata["normalization"] = normalized ? "mean" : "sum";
  for (const auto &g : grams) {
    metadata[site_key(g.site_id(), "count")] = std::to_string(g.sample_count());
    art.tensors.push_back({g.site_id(), normalized ? g.normalized() : g.gram()});
  }
  art.manifest = make_manifest(ArtifactKind::kGrams, art.tensors, std::move(metadata));
  return art;
}

std::vector<GramAccumulator> grams_from_artifact(const Artifact &artifact) {
  expect_kind(artifact, ArtifactKind::kGrams);
  std::vector<GramAccumulator> out;
  for (const auto &t : artifact.tensors) {
    const auto &count = require_meta(artifact.manifest, site_key(t.name, "count"));
    std::int64_t n = 0;
    std::from_chars(count.data(), count.data() + count.size(), n);
    out.push_back(GramAccumulator::from_parts(t.name, t.value, n));
  }
  return out;
}

ToyModel CompressedModel::to_dense() const {
  std::vector<WeightSite> layers;
  for (const auto &s : sites) {
    WeightSite w;
    w.site_id = s.site_id;
    w.layer_index = s.layer_index;
    w.matrix_type = s.matrix_type;
    w.weight = s.factors ? densify(*s.factors) : s.dense;
    layers.push_back(std::move(w));
  }
  return ToyModel(std::move(layers), activation);
}

Artifact compressed_to_artifact(const CompressedModel &model,
                                std::map<std::string, std::string> metadata) {
  Artifact art;
  metadata["activation"] = std::string(to_string(model.activation));
  for (const auto &s : model.sites) {
    metadata[site_key(s.site_id, "layer")] = std::to_string(s.layer_index);
    metadata[site_key(s.site_id, "type")] = std::string(to_string(s.matrix_type));
    metadata[site_key(s.site_id, "engine")] = s.engine;
    metadata[site_key(s.site_id, "refined")] = s.refined ? "true" : "false";
    metadata[site_key(s.site_id, "status")] = s.factors ? "ok" : "failed";
    if (!s.failure.empty())
      metadata[site_key(s.site_id, "failure")] = s.failure;
    if (s.factors) {
      art.tensors.push_back({s.site_id + ".a", s.factors->a});
      art.tensors.push_back({s.site_id + ".b", s.factors->b});
    } else {
      art.tensors.push_back({s.site_id + ".dense", s.dense});
    }
  }
  art.manifest = make_manifest(ArtifactKind::kCompressedModel, art.tensors, std::move(metadata));
  return art;
}

CompressedModel compressed_from_artifact(const Artifact &artifact) {
  expect_kind(artifact, ArtifactKind::kCompressedModel);
  const auto &meta = artifact.manifest.metadata;
  const auto act = parse_activation(require_meta(artifact.manifest, "activation"));
  if (!act)
    throw Error(ErrorCode::kArtifactMismatch, "unknown activation");
  CompressedModel model;
  model.activation = *act;
  for (std::size_t i = 0; i < artifact.tensors.size(); ++i) {
    const auto &name = artifact.tensors[i].name;
    CompressedSite s;
    if (name.ends_with(".dense")) {
      s.site_id = name.substr(0, name.size() - 6);
      s.dense = artifact.tensors[i].value;
    } else if (name.ends_with(".a") && i + 1 < artifact.tensors.size() &&
               artifact.tensors[i + 1].name == name.substr(0, name.size() - 2) + ".b") {
      s.site_id = name.substr(0, name.size() - 2);
      s.factors = LowRankFactors{artifact.tensors[i].value, artifact.tensors[i + 1].value};
      ++i;
    } else {
      throw Error(ErrorCode::kArtifactMismatch, "unexpected tensor " + name);
    }
    s.layer_index = parse_int(require_meta(artifact.manifest, site_key(s.site_id, "layer")), "layer");
    s.matrix_type = require_type(require_meta(artifact.manifest, site_key(s.site_id, "type")));
    if (auto it = meta.find(site_key(s.site_id, "engine")); it != meta.end())
      s.engine = it->second;
    if (auto it = meta.find(site_key(s.site_id, "refined")); it != meta.end())
      s.refined = it->second == "true";
    if (auto it = meta.find(site_key(s.site_id, "failure")); it != meta.end())
      s.failure = it->second;
    model.sites.push_back(std::move(s));
  }
  return model;
}

json plan_to_json(const CompressionPlan &plan) {
  json entries = json::array();
  for (const auto &e : plan.entries)
    entries.push_back({{"site_id", e.site_id},
                       {"matrix_type", to_string(e.matrix_type)},
                       {"layer_index", e.layer_index},
                       {"rows", e.rows},
                       {"cols", e.cols},
                       {"allocated_ratio", e.allocated_ratio},
                       {"resolved_rank", e.resolved_rank},
                       {"l_min_score", e.l_min_score}});
  return {{"format_version", "1"},
          {"kind", "plan"},
          {"target_ratio", plan.target_ratio},
          {"mode", to_string(plan.mode)},
          {"entries", std::move(entries)}};
}

CompressionPlan plan_from_json(const json &j) {
  try {
    if (j.at("format_version").get<std::string>() != "1")
      throw Error(ErrorCode::kUnsupportedVersion, "plan format_version");
    if (j.at("kind").get<std::string>() != "plan")
      throw Error(ErrorCode::kArtifactMismatch, "not a plan document");
    CompressionPlan plan;
    plan.target_ratio = j.at("target_ratio").get<double>();
    const auto mode = parse_allocation(j.at("mode").get<std::string>());
    if (!mode)
      invalid("unknown allocation mode");
    plan.mode = *mode;
    for (const auto &e : j.at("entries")) {
      PlanEntry p;
      p.site_id = e.at("site_id").get<std::string>();
      p.matrix_type = require_type(e.at("matrix_type").get<std::string>());
      p.layer_index = e.at("layer_index").get<int>();
      p.rows = e.at("rows").get<std::int64_t>();
      p.cols = e.at("cols").get<std::int64_t>();
      p.allocated_ratio = e.at("allocated_ratio").get<double>();
      p.resolved_rank = e.at("resolved_rank").get<std::int64_t>();
      p.l_min_score = e.at("l_min_score").get<double>();
      plan.entries.push_back(std::move(p));
    }
    std::sort(plan.entries.begin(), plan.entries.end(),
              [](const PlanEntry &a, const PlanEntry &b) { return a.site_id < b.site_id; });
    return plan;
  } catch (const json::exception &e) {
    invalid(std::string("malformed plan: ") + e.what());
  }
}

void save_plan(const CompressionPlan &plan, const fs::path &path) {
  write_text_atomic(path, plan_to_json(plan).dump(2) + "\n");
}

CompressionPlan load_plan(const fs::path &path) {
  try {
    return plan_from_json(json::parse(read_text(path)));
  } catch (const json::parse_error &e) {
    invalid(path.string() + ": " + e.what());
  }
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return ec == std::errc() ? std::string(buf, ptr) : std::string("nan");
}

} // namespace lrf
