#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "helpers.hpp"
#include "isfl/trainer.hpp"

using namespace isfl;

namespace {

/// Six rows of three classes: labels 0,0,0,1,1,2.
Dataset small_dataset() {
  std::vector<double> x{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  return Dataset(x, {0, 0, 0, 1, 1, 2}, 1, 3);
}

std::vector<double> label_frequencies(const Dataset& ds, const std::vector<std::size_t>& rows) {
  std::vector<double> f(ds.classes(), 0.0);
  for (std::size_t r : rows) f[static_cast<std::size_t>(ds.label(r))] += 1.0;
  for (auto& v : f) v /= static_cast<double>(rows.size());
  return f;
}

}  // namespace

TEST(CategorySampler, FrequenciesMatchPlan) {
  const auto ds = small_dataset();
  const auto shard = test::whole_shard(ds);
  const std::vector<double> q{0.2, 0.5, 0.3};
  CategorySampler s(ds, shard, q);
  Rng rng = make_rng(1);
  std::vector<std::size_t> rows;
  s.draw_batch(100000, rng, rows);
  const auto f = label_frequencies(ds, rows);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(f[c], q[c], 0.02);
}

TEST(CategorySampler, ChiSquareWithinCategory) {
  const auto ds = small_dataset();
  const auto shard = test::whole_shard(ds);
  CategorySampler s(ds, shard, std::vector<double>{1.0, 0.0, 0.0});
  Rng rng = make_rng(2);
  std::vector<std::size_t> rows;
  const std::size_t n = 30000;
  s.draw_batch(n, rng, rows);
  std::map<std::size_t, double> count;
  for (std::size_t r : rows) count[r] += 1.0;
  ASSERT_EQ(count.size(), 3u);
  double chi2 = 0.0;
  for (const auto& [row, c] : count) {
    EXPECT_LT(row, 3u);
    const double e = static_cast<double>(n) / 3.0;
    chi2 += (c - e) * (c - e) / e;
  }
  EXPECT_LT(chi2, 13.8);  // 2 degrees of freedom, p = 0.001
}

TEST(CategorySampler, OneHotPlanDrawsOneCategory) {
  const auto ds = small_dataset();
  CategorySampler s(ds, test::whole_shard(ds), std::vector<double>{0.0, 0.0, 1.0});
  Rng rng = make_rng(3);
  std::vector<std::size_t> rows;
  s.draw_batch(50, rng, rows);
  for (std::size_t r : rows) EXPECT_EQ(r, 5u);
}

TEST(CategorySampler, RejectsMassOutsideSupport) {
  const auto ds = small_dataset();
  const auto shard = test::shard_of(ds, {0, 1, 3});
  EXPECT_THROW(CategorySampler(ds, shard, std::vector<double>{0.5, 0.25, 0.25}), ArgumentError);
  EXPECT_THROW(CategorySampler(ds, shard, std::vector<double>{0.0, 0.0, 0.0}), ArgumentError);
  EXPECT_THROW(CategorySampler(ds, shard, std::vector<double>{0.5, 0.5}), ArgumentError);
}

TEST(SamplesPerEpoch, FloorWithMinimumOne) {
  EXPECT_EQ(samples_per_epoch(100, 1.0), 100u);
  EXPECT_EQ(samples_per_epoch(100, 0.25), 25u);
  EXPECT_EQ(samples_per_epoch(10, 0.3), 3u);
  EXPECT_EQ(samples_per_epoch(7, 0.1), 1u);
}

TEST(LocalTrain, ZeroStepSizeLeavesParamsUnchanged) {
  const auto ds = generate_synthetic(3, 10, 2, 1.0, 1);
  const auto spec = test::mlp(2, 3, 3);
  const auto init = init_params(spec, 5);
  const auto shard = test::whole_shard(ds);
  TrainerConfig cfg{4, 3, 0.0, 1.0, 9};
  const auto out = local_train(spec, init, ds, shard, identity_plan(shard.local_distribution), cfg);
  EXPECT_EQ(out.values(), init.values());
}

TEST(LocalTrain, FullShardSamplerIsPlainGradientDescent) {
  const auto ds = generate_synthetic(3, 10, 2, 1.0, 1);
  const auto spec = test::mlp(2, 3, 3);
  const auto init = init_params(spec, 5);
  const auto rows = all_rows(ds);
  FullShardSampler sampler(rows);
  TrainerConfig cfg{static_cast<int>(rows.size()), 2, 0.1, 1.0, 0};
  Rng rng = make_rng(0);
  std::vector<int> epochs;
  const auto out = local_train(spec, init, ds, rows.size(), sampler, cfg, rng,
                               [&](int e, const ParamVector&) { epochs.push_back(e); });
  auto expect = init;
  for (int e = 0; e < 2; ++e) expect = sgd_step(expect, backward_grad(spec, expect, ds), 0.1);
  EXPECT_EQ(out.values(), expect.values());
  EXPECT_EQ(epochs, (std::vector<int>{1, 2}));
}

TEST(LocalTrain, BatchCountFollowsSamplingRatio) {
  const auto ds = generate_synthetic(2, 25, 2, 1.0, 1);
  const auto spec = test::mlp(2, 3, 2);
  struct Counting {
    std::vector<std::size_t> sizes;
    void draw_batch(std::size_t n, Rng&, std::vector<std::size_t>& out) {
      sizes.push_back(n);
      out.assign(n, 0);
    }
  } sampler;
  TrainerConfig cfg{8, 2, 0.01, 0.5, 0};
  Rng rng = make_rng(0);
  local_train(spec, init_params(spec, 1), ds, ds.size(), sampler, cfg, rng);
  EXPECT_EQ(sampler.sizes, (std::vector<std::size_t>{8, 8, 8, 1, 8, 8, 8, 1}));
}

TEST(LocalTrain, DeterministicForFixedSeed) {
  const auto ds = generate_synthetic(3, 20, 2, 1.0, 1);
  const auto spec = test::mlp(2, 4, 3);
  const auto shard = test::whole_shard(ds);
  TrainerConfig cfg{8, 2, 0.05, 1.0, 17};
  const auto plan = rw_plan(shard.local_distribution);
  const auto a = local_train(spec, init_params(spec, 1), ds, shard, plan, cfg);
  const auto b = local_train(spec, init_params(spec, 1), ds, shard, plan, cfg);
  EXPECT_EQ(a.values(), b.values());
  cfg.seed = 18;
  const auto c = local_train(spec, init_params(spec, 1), ds, shard, plan, cfg);
  EXPECT_NE(a.values(), c.values());
}

TEST(LocalTrain, RejectsBadConfig) {
  const auto ds = small_dataset();
  const auto spec = test::mlp(1, 2, 3);
  const auto shard = test::whole_shard(ds);
  const auto plan = identity_plan(shard.local_distribution);
  EXPECT_THROW(local_train(spec, init_params(spec, 0), ds, shard, plan, TrainerConfig{0, 1, 0.1, 1.0, 0}),
               ArgumentError);
  EXPECT_THROW(local_train(spec, init_params(spec, 0), ds, shard, plan, TrainerConfig{1, 1, -0.1, 1.0, 0}),
               ArgumentError);
  EXPECT_THROW(local_train(spec, init_params(spec, 0), ds, shard, plan, TrainerConfig{1, 1, 0.1, 1.5, 0}),
               ArgumentError);
}

TEST(WeightedSampleBatch, ReturnsBatchOfRequestedSize) {
  const auto ds = small_dataset();
  const auto shard = test::whole_shard(ds);
  Rng rng = make_rng(4);
  const auto batch = weighted_sample_batch(ds, shard, rw_plan(shard.local_distribution), 40, rng);
  EXPECT_EQ(batch.size(), 40u);
  EXPECT_EQ(batch.classes(), 3u);
}

TEST(Plans, NormalizeScores) {
  const auto p = normalize_scores(std::vector<double>{1.0, 3.0});
  EXPECT_DOUBLE_EQ(p[0], 0.25);
  EXPECT_DOUBLE_EQ(p[1], 0.75);
  const auto u = normalize_scores(std::vector<double>{0.0, 0.0, 0.0, 0.0});
  for (double v : u) EXPECT_EQ(v, 0.25);
  EXPECT_THROW(normalize_scores(std::vector<double>{1.0, -1.0}), ArgumentError);
}

TEST(Plans, GradNormProportionalToGradientNorms) {
  const auto ds = generate_synthetic(3, 5, 2, 1.0, 1);
  const auto spec = test::mlp(2, 3, 3);
  const auto params = init_params(spec, 2);
  const auto shard = test::shard_of(ds, {0, 4, 7, 11});
  const auto probs = gradnorm_plan(spec, params, ds, shard);
  double total = 0.0;
  std::vector<double> norms;
  for (std::size_t r : shard.indices) {
    norms.push_back(per_sample_grad(spec, params, ds, r).norm());
    total += norms.back();
  }
  for (std::size_t i = 0; i < norms.size(); ++i) EXPECT_NEAR(probs[i], norms[i] / total, 1e-14);
}

TEST(Plans, RwPlanIsUniformOnSupport) {
  const CategoryDistribution pk({0.7, 0.0, 0.2, 0.1});
  const auto plan = rw_plan(pk);
  const double third = 1.0 / 3.0;
  EXPECT_EQ(plan.q, (std::vector<double>{third, 0.0, third, third}));
  EXPECT_NEAR(plan.w[0], third / 0.7, 1e-15);
  EXPECT_EQ(plan.w[1], 0.0);
  EXPECT_EQ(plan.check(pk), "");
  const auto id = identity_plan(pk);
  EXPECT_EQ(id.q, pk.probs());
  EXPECT_EQ(id.check(pk), "");
}

TEST(Unbiasedness, CategoryDrawsMatchWeightedLocalMean) {
  // Drawing categories from q estimates the local mean reweighted by w = q / pk.
  const auto ds = generate_synthetic(3, 40, 2, 1.0, 3);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.label(i) != 2 || i % 4 == 0) rows.push_back(i);
  const auto shard = test::shard_of(ds, rows);
  const std::vector<double> q{0.2, 0.3, 0.5};
  std::vector<double> w;
  for (std::size_t c = 0; c < 3; ++c) w.push_back(q[c] / shard.local_distribution[c]);
  auto f = [&](std::size_t r) { return ds.row(r)[0] + 2.0; };
  double weighted = 0.0;
  for (std::size_t r : rows) weighted += w[static_cast<std::size_t>(ds.label(r))] * f(r);
  weighted /= static_cast<double>(rows.size());
  CategorySampler s(ds, shard, q);
  Rng rng = make_rng(8);
  std::vector<std::size_t> draw;
  s.draw_batch(200000, rng, draw);
  double est = 0.0;
  for (std::size_t r : draw) est += f(r);
  est /= static_cast<double>(draw.size());
  EXPECT_LE(std::abs(est - weighted) / std::abs(weighted), 0.02);
}
