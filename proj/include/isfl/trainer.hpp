#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "isfl/data.hpp"
#include "isfl/distribution.hpp"
#include "isfl/errors.hpp"
#include "isfl/isweights.hpp"
#include "isfl/model.hpp"
#include "isfl/rng.hpp"

namespace isfl {

struct TrainerConfig {
  int batch_size = 128;
  int local_epochs = 5;
  double eta = 1e-3;
  double sampling_ratio = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(batch_size >= 1, "trainer: batch_size must be >= 1");
    detail::require(local_epochs >= 1, "trainer: local_epochs must be >= 1");
    detail::require(std::isfinite(eta) && eta >= 0.0, "trainer: eta must be finite and >= 0");
    detail::require(sampling_ratio > 0.0 && sampling_ratio <= 1.0, "trainer: sampling_ratio must lie in (0, 1]");
  }
};

/// Samples processed per local epoch: floor(SR * |D_k|), at least one.
inline std::size_t samples_per_epoch(std::size_t shard_size, double sampling_ratio) {
  const auto n = static_cast<std::size_t>(std::floor(sampling_ratio * static_cast<double>(shard_size) + 1e-9));
  return std::max<std::size_t>(1, n);
}

/// Draws rows i.i.d.: a category with probability q_i, then a row uniformly
/// from that category's local pool.
class CategorySampler {
 public:
  CategorySampler(const Dataset& ds, const ClientShard& shard, std::span<const double> q) {
    detail::require(q.size() == ds.classes(), "sampler: q length must equal the class count");
    detail::require(!shard.indices.empty(), "sampler: empty shard");
    pools_ = rows_by_label(ds, shard.indices);
    std::vector<double> weights(q.size(), 0.0);
    bool any = false;
    for (std::size_t c = 0; c < q.size(); ++c) {
      detail::require(std::isfinite(q[c]) && q[c] >= 0.0, "sampler: q entries must be finite and >= 0");
      if (q[c] == 0.0) continue;
      detail::require(!pools_[c].empty(), "sampler: plan puts mass on category " + std::to_string(c) +
                                              " which the client does not hold");
      weights[c] = q[c];
      any = true;
    }
    detail::require(any, "sampler: plan has empty support");
    categories_ = std::discrete_distribution<std::size_t>(weights.begin(), weights.end());
  }

  std::size_t draw(Rng& rng) {
    const auto& pool = pools_[categories_(rng)];
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    return pool[pick(rng)];
  }

  void draw_batch(std::size_t n, Rng& rng, std::vector<std::size_t>& out) {
    out.resize(n);
    for (auto& r : out) r = draw(rng);
  }

 private:
  std::vector<std::vector<std::size_t>> pools_;
  std::discrete_distribution<std::size_t> categories_;
};

/// Draws rows i.i.d. with per-row probabilities (GradNorm-IS).
class PerSampleSampler {
 public:
  PerSampleSampler(std::span<const std::size_t> rows, std::span<const double> probs)
      : rows_(rows.begin(), rows.end()), dist_(probs.begin(), probs.end()) {
    detail::require(!rows.empty() && rows.size() == probs.size(), "sampler: rows and probabilities must match");
  }

  void draw_batch(std::size_t n, Rng& rng, std::vector<std::size_t>& out) {
    out.resize(n);
    for (auto& r : out) r = rows_[dist_(rng)];
  }

 private:
  std::vector<std::size_t> rows_;
  std::discrete_distribution<std::size_t> dist_;
};

/// Test-mode sampler: every batch is the whole shard, in order.
class FullShardSampler {
 public:
  explicit FullShardSampler(std::span<const std::size_t> rows) : rows_(rows.begin(), rows.end()) {}

  void draw_batch(std::size_t, Rng&, std::vector<std::size_t>& out) { out = rows_; }

 private:
  std::vector<std::size_t> rows_;
};

/// B rows drawn according to the plan, returned as a dataset.
inline Dataset weighted_sample_batch(const Dataset& ds, const ClientShard& shard, const SamplingPlan& plan,
                                     std::size_t batch_size, Rng& rng) {
  CategorySampler sampler(ds, shard, plan.q);
  std::vector<std::size_t> rows;
  sampler.draw_batch(batch_size, rng, rows);
  return ds.subset(rows);
}

struct NoEpochHook {
  void operator()(int, const ParamVector&) const {}
};

/// Local SGD for E_l epochs. Each epoch processes samples_per_epoch rows in
/// batches of B (the last one possibly smaller); `on_epoch(e, params)` is
/// called after epoch e (1-based).
template <typename Sampler, typename OnEpoch = NoEpochHook>
ParamVector local_train(const ModelSpec& spec, ParamVector params, const Dataset& ds, std::size_t shard_size,
                        Sampler& sampler, const TrainerConfig& cfg, Rng& rng, OnEpoch&& on_epoch = {}) {
  cfg.validate();
  detail::check_compatible(spec, params, ds);
  const std::size_t per_epoch = samples_per_epoch(shard_size, cfg.sampling_ratio);
  const auto B = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> batch;
  for (int e = 1; e <= cfg.local_epochs; ++e) {
    for (std::size_t done = 0; done < per_epoch; done += B) {
      sampler.draw_batch(std::min(B, per_epoch - done), rng, batch);
      const auto grad = backward_grad(spec, params, ds, batch);
      params.axpy(-cfg.eta, grad);
    }
    on_epoch(e, params);
  }
  return params;
}

/// Plan-driven local training seeded from cfg.seed.
inline ParamVector local_train(const ModelSpec& spec, const ParamVector& params, const Dataset& ds,
                               const ClientShard& shard, const SamplingPlan& plan, const TrainerConfig& cfg) {
  CategorySampler sampler(ds, shard, plan.q);
  Rng rng = make_rng(cfg.seed, {tag(Stream::kTrain)});
  return local_train(spec, params, ds, shard.indices.size(), sampler, cfg, rng);
}

/// Normalizes non-negative scores into probabilities; all-zero falls back to uniform.
inline std::vector<double> normalize_scores(std::span<const double> scores) {
  detail::require(!scores.empty(), "normalize_scores: empty input");
  double s = 0.0;
  for (double v : scores) {
    detail::require(std::isfinite(v) && v >= 0.0, "normalize_scores: scores must be finite and >= 0");
    s += v;
  }
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    out[i] = s > 0.0 ? scores[i] / s : 1.0 / static_cast<double>(scores.size());
  return out;
}

/// GradNorm-IS: per-row probabilities proportional to gradient norms at
/// `params`, aligned with shard.indices.
inline std::vector<double> gradnorm_plan(const ModelSpec& spec, const ParamVector& params, const Dataset& ds,
                                         const ClientShard& shard) {
  detail::require(!shard.indices.empty(), "gradnorm_plan: empty shard");
  return normalize_scores(per_sample_grad_norms(spec, params, ds, shard.indices));
}

/// RW-IS: uniform over the categories the client holds.
inline SamplingPlan rw_plan(const CategoryDistribution& pk) {
  SamplingPlan plan;
  std::size_t present = 0;
  for (double v : pk.probs()) present += v > 0.0 ? 1 : 0;
  plan.q.assign(pk.size(), 0.0);
  plan.w.assign(pk.size(), 0.0);
  for (std::size_t i = 0; i < pk.size(); ++i) {
    if (pk[i] == 0.0) continue;
    plan.q[i] = 1.0 / static_cast<double>(present);
    plan.w[i] = plan.q[i] / pk[i];
  }
  return plan;
}

/// No resampling: q = pk, w = 1 on the support.
inline SamplingPlan identity_plan(const CategoryDistribution& pk) {
  SamplingPlan plan;
  plan.q = pk.probs();
  plan.w.assign(pk.size(), 0.0);
  for (std::size_t i = 0; i < pk.size(); ++i)
    if (pk[i] > 0.0) plan.w[i] = 1.0;
  return plan;
}

}  // namespace isfl
