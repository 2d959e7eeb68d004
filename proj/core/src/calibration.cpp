// SPDX-License-Identifier: Apache-2.0

#include "lrf/calibration.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <Eigen/Eigenvalues>

#include "lrf/error.hpp"

namespace lrf {

namespace {

constexpr std::pair<MatrixType, std::string_view> kTypeNames[] = {
    {MatrixType::kQ, "Q"},       {MatrixType::kK, "K"},   {MatrixType::kV, "V"},
    {MatrixType::kO, "O"},       {MatrixType::kGate, "Gate"}, {MatrixType::kUp, "Up"},
    {MatrixType::kDown, "Down"}, {MatrixType::kDense, "Dense"},
};

constexpr std::pair<Activation, std::string_view> kActivationNames[] = {
    {Activation::kIdentity, "identity"}, {Activation::kRelu, "relu"}, {Activation::kGelu, "gelu"},
};

} // namespace

std::string_view to_string(MatrixType t) noexcept {
  for (const auto &[k, v] : kTypeNames)
    if (k == t)
      return v;
  return "Dense";
}

std::string_view to_string(Activation a) noexcept {
  for (const auto &[k, v] : kActivationNames)
    if (k == a)
      return v;
  return "identity";
}

std::optional<MatrixType> parse_matrix_type(std::string_view s) noexcept {
  for (const auto &[k, v] : kTypeNames)
    if (v == s)
      return k;
  return std::nullopt;
}

std::optional<Activation> parse_activation(std::string_view s) noexcept {
  for (const auto &[k, v] : kActivationNames)
    if (v == s)
      return k;
  return std::nullopt;
}

ToyModel::ToyModel(std::vector<WeightSite> layers, Activation activation)
    : layers_(std::move(layers)), activation_(activation) {
  if (layers_.empty())
    throw Error(ErrorCode::kDimensionMismatch, "model has no layers");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto &site = layers_[i];
    if (!ids.insert(site.site_id).second)
      throw Error(ErrorCode::kDimensionMismatch, "duplicate site id " + site.site_id);
    if (site.weight.size() == 0)
      throw Error(ErrorCode::kDimensionMismatch, "empty weight at " + site.site_id);
    require_finite(site.weight, "ToyModel weight");
    if (i > 0 && layers_[i - 1].output_dim() != site.input_dim())
      throw Error(ErrorCode::kDimensionMismatch,
                  "layer " + site.site_id + " input does not match previous output");
  }
}

const WeightSite *ToyModel::find(std::string_view site_id) const noexcept {
  for (const auto &site : layers_)
    if (site.site_id == site_id)
      return &site;
  return nullptr;
}

void apply_activation(Activation a, Matrix &m) {
  switch (a) {
  case Activation::kIdentity:
    return;
  case Activation::kRelu:
    m = m.cwiseMax(0.0);
    return;
  case Activation::kGelu:
    m = m.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); });
    return;
  }
}

ForwardCapture forward_capture(const ToyModel &model, const Matrix &batch) {
  if (batch.rows() != model.input_dim())
    throw Error(ErrorCode::kDimensionMismatch,
                "batch has " + std::to_string(batch.rows()) + " features, model expects " +
                    std::to_string(model.input_dim()));
  ForwardCapture out;
  Matrix x = batch;
  const auto &layers = model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out.activations.emplace(layers[i].site_id, x);
    Matrix y = layers[i].weight * x;
    if (i + 1 < layers.size())
      apply_activation(model.activation(), y);
    x = std::move(y);
  }
  out.output = std::move(x);
  return out;
}

GramAccumulator::GramAccumulator(std::string site_id, Eigen::Index dim)
    : site_id_(std::move(site_id)), gram_(Matrix::Zero(dim, dim)) {
  if (dim <= 0)
    throw Error(ErrorCode::kDimensionMismatch, "gram dimension must be positive");
}

void GramAccumulator::add(const Matrix &x) {
  if (x.rows() != gram_.rows())
    throw Error(ErrorCode::kDimensionMismatch,
                "activation rows " + std::to_string(x.rows()) + " != gram dim " +
                    std::to_string(gram_.rows()));
  require_finite(x, "GramAccumulator::add");
  gram_.noalias() += x * x.transpose();
  gram_ = 0.5 * (gram_ + gram_.transpose()).eval();
  count_ += x.cols();
}

void GramAccumulator::merge(const GramAccumulator &other) {
  if (other.dim() != dim())
    throw Error(ErrorCode::kDimensionMismatch, "cannot merge grams of different dimension");
  gram_ += other.gram_;
  count_ += other.count_;
}

Matrix GramAccumulator::normalized() const {
  if (count_ == 0)
    return Matrix::Zero(dim(), dim());
  return gram_ / static_cast<double>(count_);
}

bool GramAccumulator::is_psd() const {
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(gram_),
                                                           Eigen::EigenvaluesOnly);
  const double floor = -1e-8 * gram_.trace() / static_cast<double>(dim());
  return eig.eigenvalues().minCoeff() >= floor;
}

GramAccumulator GramAccumulator::from_parts(std::string site_id, Matrix gram, std::int64_t count) {
  if (gram.rows() != gram.cols())
    throw Error(ErrorCode::kDimensionMismatch, "gram must be square");
  GramAccumulator acc(std::move(site_id), gram.rows());
  acc.gram_ = std::move(gram);
  acc.count_ = count;
  return acc;
}

GramAccumulator accumulate(GramAccumulator acc, const Matrix &x) {
  acc.add(x);
  return acc;
}

std::string to_string(const Distribution &d) {
  switch (d.kind) {
  case Distribution::Kind::kGaussian: return "gaussian";
  case Distribution::Kind::kHeavyTailed: return "heavy_tailed";
  case Distribution::Kind::kLowRank: return "low_rank(" + std::to_string(d.rank) + ")";
  }
  return "gaussian";
}

std::optional<Distribution> parse_distribution(std::string_view s) {
  if (s == "gaussian")
    return Distribution::gaussian();
  if (s == "heavy_tailed")
    return Distribution::heavy_tailed();
  constexpr std::string_view prefix = "low_rank(";
  if (s.starts_with(prefix) && s.ends_with(")")) {
    const auto digits = s.substr(prefix.size(), s.size() - prefix.size() - 1);
    if (digits.empty())
      return std::nullopt;
    int r = 0;
    for (char c : digits) {
      if (c < '0' || c > '9')
        return std::nullopt;
      r = r * 10 + (c - '0');
    }
    return Distribution::low_rank(r);
  }
  return std::nullopt;
}

Matrix generate_calibration(std::uint64_t seed, int n_samples, int dim, const Distribution &dist) {
  if (n_samples < 1 || dim < 1)
    throw Error(ErrorCode::kDimensionMismatch, "calibration needs n_samples >= 1 and dim >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill_normal = [&](Matrix &m) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = normal(rng);
  };

  switch (dist.kind) {
  case Distribution::Kind::kGaussian: {
    Matrix x(dim, n_samples);
    fill_normal(x);
    return x;
  }
  case Distribution::Kind::kHeavyTailed: {
    std::student_t_distribution<double> student(3.0);
    Matrix x(dim, n_samples);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      x.data()[i] = student(rng);
    return x;
  }
  case Distribution::Kind::kLowRank: {
    if (dist.rank < 1 || dist.rank > dim)
      throw Error(ErrorCode::kInvalidRank, "low_rank(" + std::to_string(dist.rank) +
                                               ") outside [1, " + std::to_string(dim) + "]");
    Matrix basis(dim, dist.rank);
    Matrix coeffs(dist.rank, n_samples);
    fill_normal(basis);
    fill_normal(coeffs);
    return basis * coeffs;
  }
  }
  return Matrix();
}

} // namespace lrf
