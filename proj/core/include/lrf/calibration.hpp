// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lrf/matrix.hpp"

namespace lrf {

enum class MatrixType { kQ, kK, kV, kO, kGate, kUp, kDown, kDense };
enum class Activation { kIdentity, kRelu, kGelu };

std::string_view to_string(MatrixType t) noexcept;
std::string_view to_string(Activation a) noexcept;
std::optional<MatrixType> parse_matrix_type(std::string_view s) noexcept;
std::optional<Activation> parse_activation(std::string_view s) noexcept;

/// One named weight matrix. The weight is applied as W·x, so it is
/// (output dim)×(input dim) and consumes column-vector samples.
struct WeightSite {
  std::string site_id;
  int layer_index = 0;
  MatrixType matrix_type = MatrixType::kDense;
  Matrix weight;

  Eigen::Index input_dim() const noexcept { return weight.cols(); }
  Eigen::Index output_dim() const noexcept { return weight.rows(); }
};

/// A plain chain of weight sites with an activation between consecutive sites.
/// The last site's output is returned without activation.
class ToyModel {
public:
  ToyModel(std::vector<WeightSite> layers, Activation activation);

  const std::vector<WeightSite> &layers() const noexcept { return layers_; }
  Activation activation() const noexcept { return activation_; }
  Eigen::Index input_dim() const noexcept { return layers_.front().input_dim(); }
  Eigen::Index output_dim() const noexcept { return layers_.back().output_dim(); }

  const WeightSite *find(std::string_view site_id) const noexcept;

private:
  std::vector<WeightSite> layers_;
  Activation activation_;
};

void apply_activation(Activation a, Matrix &m);

struct ForwardCapture {
  std::map<std::string, Matrix> activations; ///< input presented to each site
  Matrix output;
};

/// Runs `batch` (features × samples) through the model, recording each site's input.
ForwardCapture forward_capture(const ToyModel &model, const Matrix &batch);

/// Running, unnormalized Σ x·xᵀ for one weight site.
class GramAccumulator {
public:
  GramAccumulator(std::string site_id, Eigen::Index dim);

  void add(const Matrix &x);
  void merge(const GramAccumulator &other);

  const std::string &site_id() const noexcept { return site_id_; }
  const Matrix &gram() const noexcept { return gram_; }
  std::int64_t sample_count() const noexcept { return count_; }
  Eigen::Index dim() const noexcept { return gram_.rows(); }

  /// Sample covariance gram / count (zero when nothing was ingested).
  Matrix normalized() const;

  /// Smallest eigenvalue ≥ −1e-8·trace/d.
  bool is_psd() const;

  static GramAccumulator from_parts(std::string site_id, Matrix gram, std::int64_t count);

private:
  std::string site_id_;
  Matrix gram_;
  std::int64_t count_ = 0;
};

GramAccumulator accumulate(GramAccumulator acc, const Matrix &x);

struct Distribution {
  enum class Kind { kGaussian, kHeavyTailed, kLowRank };
  Kind kind = Kind::kGaussian;
  int rank = 0; ///< only for kLowRank

  static Distribution gaussian() { return {Kind::kGaussian, 0}; }
  static Distribution heavy_tailed() { return {Kind::kHeavyTailed, 0}; }
  static Distribution low_rank(int r) { return {Kind::kLowRank, r}; }
};

std::string to_string(const Distribution &d);
std::optional<Distribution> parse_distribution(std::string_view s);

/// dim × n_samples calibration batch. Gaussian entries, Student-t(3) entries,
/// or columns confined to a random r-dimensional subspace.
Matrix generate_calibration(std::uint64_t seed, int n_samples, int dim, const Distribution &dist);

} // namespace lrf
