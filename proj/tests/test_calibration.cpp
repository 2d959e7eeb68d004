// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <random>

#include <gtest/gtest.h>

#include "lrf/calibration.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace {

using lrf::Activation;
using lrf::ErrorCode;
using lrf::Matrix;
using lrf::MatrixType;
using lrf::WeightSite;
using testing_support::error_of;

WeightSite site(std::string id, int layer, Matrix w, MatrixType t = MatrixType::kDense) {
  return WeightSite{std::move(id), layer, t, std::move(w)};
}

TEST(ToyModel, ValidatesIdsAndShapes) {
  const Matrix w = Matrix::Identity(3, 3);
  EXPECT_EQ(error_of([&] { lrf::ToyModel({site("a", 0, w), site("a", 1, w)}, Activation::kRelu); }),
            ErrorCode::kDimensionMismatch);
  EXPECT_EQ(error_of([&] {
              lrf::ToyModel({site("a", 0, Matrix::Ones(4, 3)), site("b", 1, w)}, Activation::kRelu);
            }),
            ErrorCode::kDimensionMismatch);
  EXPECT_EQ(error_of([] { lrf::ToyModel({}, Activation::kRelu); }), ErrorCode::kDimensionMismatch);
  const lrf::ToyModel ok({site("a", 0, Matrix::Ones(4, 3)), site("b", 1, Matrix::Ones(2, 4))},
                         Activation::kGelu);
  EXPECT_EQ(ok.input_dim(), 3);
  EXPECT_EQ(ok.output_dim(), 2);
  ASSERT_NE(ok.find("b"), nullptr);
  EXPECT_EQ(ok.find("b")->layer_index, 1);
  EXPECT_EQ(ok.find("c"), nullptr);
}

TEST(ForwardCapture, IdentityModelSeesTheBatch) {
  const lrf::ToyModel model({site("only", 0, Matrix::Identity(2, 2))}, Activation::kIdentity);
  const Matrix batch = Matrix::Identity(2, 2);
  const auto cap = lrf::forward_capture(model, batch);
  EXPECT_EQ(cap.activations.at("only"), batch);
  EXPECT_EQ(cap.output, batch);
}

TEST(ForwardCapture, SecondLayerSeesActivatedFirstOutput) {
  std::mt19937_64 rng(1);
  const Matrix w0 = oracle::gaussian(rng, 3, 3), w1 = oracle::gaussian(rng, 2, 3);
  const Matrix batch = oracle::gaussian(rng, 3, 5);
  const lrf::ToyModel model({site("w0", 0, w0), site("w1", 1, w1)}, Activation::kRelu);
  const auto cap = lrf::forward_capture(model, batch);
  const Matrix expected = (w0 * batch).cwiseMax(0.0);
  EXPECT_LE((cap.activations.at("w1") - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ForwardCapture, MatchesStraightLineReference) {
  for (Activation act : {Activation::kRelu, Activation::kGelu, Activation::kIdentity}) {
    std::mt19937_64 rng(3);
    std::vector<WeightSite> layers;
    layers.push_back(site("l0", 0, oracle::gaussian(rng, 5, 4)));
    layers.push_back(site("l1", 1, oracle::gaussian(rng, 6, 5)));
    layers.push_back(site("l2", 2, oracle::gaussian(rng, 3, 6)));
    const lrf::ToyModel model(layers, act);
    const Matrix batch = oracle::gaussian(rng, 4, 16);
    const auto cap = lrf::forward_capture(model, batch);
    const auto ref = oracle::forward_inputs(model, batch);
    EXPECT_EQ(cap.activations.at("l0"), batch); // exact, not approximate
    EXPECT_LE((cap.activations.at("l1") - ref[1]).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((cap.activations.at("l2") - ref[2]).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((cap.output - ref[3]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(ForwardCapture, WrongBatchDimension) {
  const lrf::ToyModel model({site("only", 0, Matrix::Identity(2, 2))}, Activation::kIdentity);
  EXPECT_EQ(error_of([&] { lrf::forward_capture(model, Matrix::Ones(3, 4)); }),
            ErrorCode::kDimensionMismatch);
}

TEST(Accumulate, SingleOuterProduct) {
  Matrix x(2, 1);
  x << 1, 2;
  const auto acc = lrf::accumulate(lrf::GramAccumulator("s", 2), x);
  Matrix expected(2, 2);
  expected << 1, 2, 2, 4;
  EXPECT_EQ(acc.gram(), expected);
  EXPECT_EQ(acc.sample_count(), 1);
}

TEST(Accumulate, AdditiveOverColumnBlocks) {
  std::mt19937_64 rng(4);
  const Matrix x1 = oracle::gaussian(rng, 4, 3), x2 = oracle::gaussian(rng, 4, 5);
  Matrix both(4, 8);
  both << x1, x2;
  const auto split = lrf::accumulate(lrf::accumulate(lrf::GramAccumulator("s", 4), x1), x2);
  const auto joint = lrf::accumulate(lrf::GramAccumulator("s", 4), both);
  EXPECT_LE((split.gram() - joint.gram()).norm(), 1e-12 * joint.gram().norm());
  EXPECT_EQ(split.sample_count(), 8);
}

TEST(Accumulate, LawOfLargeNumbers) {
  const Matrix x = lrf::generate_calibration(99, 256, 8, lrf::Distribution::gaussian());
  const auto acc = lrf::accumulate(lrf::GramAccumulator("s", 8), x);
  EXPECT_LE((acc.normalized() - Matrix::Identity(8, 8)).cwiseAbs().maxCoeff(), 0.5);
}

TEST(Accumulate, DimensionMismatch) {
  EXPECT_EQ(error_of([] { lrf::accumulate(lrf::GramAccumulator("s", 3), Matrix::Ones(2, 2)); }),
            ErrorCode::kDimensionMismatch);
  lrf::GramAccumulator a("a", 3);
  EXPECT_EQ(error_of([&] { a.merge(lrf::GramAccumulator("b", 2)); }), ErrorCode::kDimensionMismatch);
}

TEST(Accumulate, EmptyNormalizedIsZero) {
  EXPECT_EQ(lrf::GramAccumulator("s", 3).normalized(), Matrix::Zero(3, 3));
}

TEST(AccumulateProperty, PsdSymmetricAndOrderIndependent) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> dim(2, 8), cols(1, 6);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = dim(rng);
    std::vector<Matrix> chunks;
    for (int c = 0; c < 5; ++c)
      chunks.push_back(oracle::gaussian(rng, d, cols(rng)) * (trial % 3 == 0 ? 1e3 : 1.0));
    lrf::GramAccumulator fwd("s", d), rev("s", d), merged("s", d);
    std::int64_t total = 0;
    for (const auto &c : chunks) {
      fwd.add(c);
      total += c.cols();
      ASSERT_LE((fwd.gram() - fwd.gram().transpose()).cwiseAbs().maxCoeff(),
                1e-10 * fwd.gram().cwiseAbs().maxCoeff());
    }
    for (auto it = chunks.rbegin(); it != chunks.rend(); ++it)
      rev.add(*it);
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      lrf::GramAccumulator part("s", d);
      part.add(chunks[i]);
      merged.merge(part);
    }
    EXPECT_EQ(fwd.sample_count(), total);
    EXPECT_EQ(merged.sample_count(), total);
    EXPECT_LE((fwd.gram() - rev.gram()).norm(), 1e-12 * fwd.gram().norm());
    EXPECT_LE((fwd.gram() - merged.gram()).norm(), 1e-12 * fwd.gram().norm());

    EXPECT_TRUE(fwd.is_psd());
    const double trace = fwd.gram().trace();
    EXPECT_GE(oracle::symmetric_eigenvalues(fwd.gram()).front(), -1e-8 * trace / d);
  }
}

TEST(GenerateCalibration, LowRankOneHasParallelColumns) {
  const Matrix x = lrf::generate_calibration(7, 4, 3, lrf::Distribution::low_rank(1));
  ASSERT_EQ(x.rows(), 3);
  ASSERT_EQ(x.cols(), 4);
  const auto sigma = oracle::singular_values(x);
  EXPECT_GT(sigma[0], 0.0);
  EXPECT_LE(sigma[1], 1e-12 * sigma[0]);
  const auto eig = oracle::symmetric_eigenvalues(x * x.transpose());
  EXPECT_LE(std::abs(eig[1]), 1e-12 * eig[2]);
}

TEST(GenerateCalibration, DeterministicPerSeed) {
  for (const auto &dist : {lrf::Distribution::gaussian(), lrf::Distribution::heavy_tailed(),
                           lrf::Distribution::low_rank(2)}) {
    const Matrix a = lrf::generate_calibration(7, 10, 3, dist);
    const Matrix b = lrf::generate_calibration(7, 10, 3, dist);
    EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
    const Matrix c = lrf::generate_calibration(8, 10, 3, dist);
    EXPECT_NE(a, c);
  }
}

TEST(GenerateCalibration, GaussianGramIsPositiveDefinite) {
  const Matrix x = lrf::generate_calibration(11, 256, 8, lrf::Distribution::gaussian());
  EXPECT_GT(oracle::symmetric_eigenvalues(x * x.transpose()).front(), 0.0);
}

TEST(GenerateCalibration, LowRankRankMustFit) {
  EXPECT_EQ(error_of([] { lrf::generate_calibration(1, 4, 3, lrf::Distribution::low_rank(4)); }),
            ErrorCode::kInvalidRank);
}

TEST(GenerateCalibration, LowRankSpansExactSubspace) {
  const Matrix x = lrf::generate_calibration(5, 64, 8, lrf::Distribution::low_rank(3));
  const auto sigma = oracle::singular_values(x);
  EXPECT_GT(sigma[2], 1e-6 * sigma[0]);
  EXPECT_LE(sigma[3], 1e-12 * sigma[0]);
}

TEST(Distribution, ParseRoundTrip) {
  for (const char *s : {"gaussian", "heavy_tailed", "low_rank(3)"}) {
    const auto d = lrf::parse_distribution(s);
    ASSERT_TRUE(d.has_value()) << s;
    EXPECT_EQ(lrf::to_string(*d), s);
  }
  EXPECT_FALSE(lrf::parse_distribution("low_rank(x)").has_value());
  EXPECT_FALSE(lrf::parse_distribution("uniform").has_value());
}

TEST(Enums, MatrixTypeAndActivationNames) {
  for (auto t : {MatrixType::kQ, MatrixType::kK, MatrixType::kV, MatrixType::kO, MatrixType::kGate,
                 MatrixType::kUp, MatrixType::kDown, MatrixType::kDense})
    EXPECT_EQ(lrf::parse_matrix_type(lrf::to_string(t)), t);
  for (auto a : {Activation::kIdentity, Activation::kRelu, Activation::kGelu})
    EXPECT_EQ(lrf::parse_activation(lrf::to_string(a)), a);
  EXPECT_FALSE(lrf::parse_matrix_type("Z").has_value());
}

} // namespace
