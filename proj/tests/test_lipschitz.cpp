#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "isfl/lipschitz.hpp"

using namespace isfl;

namespace {

/// Scalar toy loss c_y * (theta - xi)^2 / 2, gradient c_y * (theta - xi).
struct QuadraticToy {
  std::vector<double> xi;
  std::vector<int> labels;
  std::vector<double> curvature;
  double scale = 1.0;

  std::optional<LipschitzRow> estimate(double local, double global) const {
    auto grad = [&](const double& theta, std::size_t i, std::vector<double>& out) {
      out = {scale * curvature[static_cast<std::size_t>(labels[i])] * (theta - xi[i])};
    };
    return estimate_lipschitz_generic(grad, local, global, std::abs(local - global), labels, curvature.size());
  }
};

QuadraticToy toy(std::vector<double> curvature) {
  QuadraticToy t;
  t.curvature = std::move(curvature);
  for (int i = 0; i < 12; ++i) {
    t.xi.push_back(0.3 * i - 1.0);
    t.labels.push_back(i % static_cast<int>(t.curvature.size()));
  }
  return t;
}

}  // namespace

TEST(LipschitzMatrix, StartsAtOneAndValidatesRows) {
  LipschitzMatrix L(3, 4);
  for (double v : L.values()) EXPECT_EQ(v, 1.0);
  const std::vector<double> good{0.0, 2.0, 3.0, 4.0};
  L.set_row(1, good);
  EXPECT_EQ(L.at(1, 3), 4.0);
  const std::vector<double> bad{1.0, -1.0, 0.0, 0.0};
  EXPECT_THROW(L.set_row(0, bad), ArgumentError);
  const std::vector<double> inf{1.0, INFINITY, 0.0, 0.0};
  EXPECT_THROW(L.set_row(0, inf), ArgumentError);
}

TEST(EstimateLipschitz, UnitQuadraticGivesOne) {
  const auto t = toy({1.0, 1.0, 1.0});
  for (double delta : {0.5, -2.0, 1e-3}) {
    const auto row = t.estimate(0.7, 0.7 + delta);
    ASSERT_TRUE(row);
    for (double v : row->values) EXPECT_NEAR(v, 1.0, 1e-12);
  }
}

TEST(EstimateLipschitz, PerClassCurvature) {
  const auto t = toy({0.5, 2.0, 7.0});
  const auto row = t.estimate(1.0, -0.25);
  ASSERT_TRUE(row);
  EXPECT_NEAR(row->values[0], 0.5, 1e-12);
  EXPECT_NEAR(row->values[1], 2.0, 1e-12);
  EXPECT_NEAR(row->values[2], 7.0, 1e-12);
}

TEST(EstimateLipschitz, ScaleCovarianceAndSymmetry) {
  auto t = toy({0.5, 2.0, 7.0});
  const auto base = t.estimate(1.0, -0.25);
  t.scale = 3.0;
  const auto scaled = t.estimate(1.0, -0.25);
  const auto swapped = t.estimate(-0.25, 1.0);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(scaled->values[i], 3.0 * base->values[i], 1e-12);
    EXPECT_EQ(swapped->values[i], scaled->values[i]);
  }
}

TEST(EstimateLipschitz, ZeroDeviationIsDegenerate) {
  const auto t = toy({1.0, 2.0});
  EXPECT_FALSE(t.estimate(0.4, 0.4).has_value());
}

TEST(EstimateLipschitz, MissingCategoryFilledWithRowMean) {
  auto t = toy({1.0, 3.0, 5.0});
  for (auto& y : t.labels)
    if (y == 2) y = 0;
  const auto row = t.estimate(1.0, 0.0);
  ASSERT_TRUE(row);
  EXPECT_TRUE(row->missing[2]);
  EXPECT_FALSE(row->missing[0]);
  EXPECT_NEAR(row->values[2], 2.0, 1e-12);
}

TEST(EstimateLipschitz, MlpMatchesBruteForceLoop) {
  const auto spec = test::mlp(4, 6, 3, Activation::kRelu);
  const auto probe = generate_synthetic(3, 8, 4, 1.5, 3);
  const auto global = init_params(spec, 1);
  auto local = global;
  const auto delta = init_params(spec, 2);
  local.axpy(0.05, delta);
  const auto row = estimate_lipschitz(spec, local, global, probe);
  ASSERT_TRUE(row);

  const double dev = std::sqrt(squared_distance(local, global));
  std::vector<double> expect(3, 0.0);
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const auto diff = per_sample_grad(spec, local, probe, i) - per_sample_grad(spec, global, probe, i);
    auto& e = expect[static_cast<std::size_t>(probe.label(i))];
    e = std::max(e, diff.norm() / dev);
  }
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(row->values[c], expect[c], 1e-12 * expect[c]);
  EXPECT_EQ(row->gradient_evals, 2 * probe.size());
}

TEST(SgdStats, FullBatchHasZeroVariance) {
  const auto spec = test::mlp(3, 4, 2);
  const auto probe = generate_synthetic(2, 10, 3, 1.0, 1);
  const auto p = init_params(spec, 1);
  const auto st = estimate_sgd_stats(spec, p, probe, probe.size(), 5, 3);
  EXPECT_EQ(st.sigma2, 0.0);
  EXPECT_NEAR(st.G2, backward_grad(spec, p, probe).squared_norm(), 1e-15);
  EXPECT_THROW(estimate_sgd_stats(spec, p, probe, 4, 1, 3), ArgumentError);
}

TEST(SgdStats, MaxDominatesMean) {
  const auto spec = test::mlp(3, 4, 2);
  const auto probe = generate_synthetic(2, 30, 3, 1.0, 1);
  const auto p = init_params(spec, 1);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto st = estimate_sgd_stats(spec, p, probe, 5, 8, seed);
    EXPECT_GE(st.G2, st.mean_norm2);
    EXPECT_GT(st.sigma2, 0.0);
  }
}

TEST(SgdStats, DuplicatingProbeKeepsVarianceInExpectation) {
  const auto spec = test::mlp(3, 4, 2);
  const auto probe = generate_synthetic(2, 50, 3, 1.0, 2);
  std::vector<std::size_t> twice;
  for (std::size_t i = 0; i < probe.size(); ++i) twice.insert(twice.end(), {i, i});
  const auto doubled = probe.subset(twice);
  const auto p = init_params(spec, 4);
  double a = 0.0, b = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    a += estimate_sgd_stats(spec, p, probe, 10, 20, seed).sigma2;
    b += estimate_sgd_stats(spec, p, doubled, 10, 20, seed).sigma2;
  }
  EXPECT_LE(std::abs(a - b) / a, 0.2);
}
