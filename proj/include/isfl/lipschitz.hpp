#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "isfl/data.hpp"
#include "isfl/errors.hpp"
#include "isfl/model.hpp"
#include "isfl/rng.hpp"

namespace isfl {

/// One client's per-category empirical gradient Lipschitz estimates.
struct LipschitzRow {
  std::vector<double> values;
  std::vector<bool> missing;       // category absent from the probe; value is the row mean
  std::size_t gradient_evals = 0;  // per-sample gradient evaluations spent
};

/// K x C matrix of L_{k,i}, tagged with the aggregation epoch it was measured at.
class LipschitzMatrix {
public:
  LipschitzMatrix() = default;

  /// All-ones start: with equal L the optimal plan is the global distribution.
  LipschitzMatrix(std::size_t clients, std::size_t classes)
      : clients_(clients), classes_(classes), values_(clients * classes, 1.0) {}

  std::size_t clients() const { return clients_; }
  std::size_t classes() const { return classes_; }
  long epoch_tag() const { return epoch_tag_; }
  void set_epoch_tag(long t) { epoch_tag_ = t; }

  std::span<const double> row(std::size_t k) const { return {values_.data() + k * classes_, classes_}; }
  double at(std::size_t k, std::size_t i) const { return values_[k * classes_ + i]; }

  void set_row(std::size_t k, std::span<const double> v) {
    detail::require(k < clients_ && v.size() == classes_, "LipschitzMatrix::set_row: shape mismatch");
    for (double x : v) detail::require(std::isfinite(x) && x >= 0.0, "Lipschitz entries must be finite and >= 0");
    std::copy(v.begin(), v.end(), values_.begin() + static_cast<std::ptrdiff_t>(k * classes_));
  }

  const std::vector<double>& values() const { return values_; }

private:
  std::size_t clients_ = 0;
  std::size_t classes_ = 0;
  long epoch_tag_ = 0;
  std::vector<double> values_;
};

/// Core estimator, generic over the loss. `grad(theta, i, out)` writes the
/// gradient of sample i at parameters theta into `out`. Returns nullopt when
/// the two parameter sets coincide (the ratio is 0/0).
///
/// For each category, L = max over that category's samples of
/// |grad(local) - grad(global)| / deviation_norm.
template <typename Params, typename GradFn>
std::optional<LipschitzRow> estimate_lipschitz_generic(const GradFn& grad, const Params& local, const Params& global,
                                                       double deviation_norm, std::span<const int> labels,
                                                       std::size_t classes) {
  detail::require(classes > 0, "estimate_lipschitz: classes must be positive");
  detail::require(!labels.empty(), "estimate_lipschitz: empty probe");
  if (!(deviation_norm > 0.0)) return std::nullopt;

  LipschitzRow row;
  row.values.assign(classes, 0.0);
  std::vector<bool> seen(classes, false);
  std::vector<double> ga, gb;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    detail::require(c < classes, "estimate_lipschitz: label out of range");
    grad(local, i, ga);
    grad(global, i, gb);
    row.gradient_evals += 2;
    double s = 0.0;
    for (std::size_t j = 0; j < ga.size(); ++j) {
      const double d = ga[j] - gb[j];
      s += d * d;
    }
    row.values[c] = std::max(row.values[c], std::sqrt(s) / deviation_norm);
    seen[c] = true;
  }

  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes; ++c)
    if (seen[c]) {
      sum += row.values[c];
      ++present;
    }
  row.missing.assign(classes, false);
  for (std::size_t c = 0; c < classes; ++c)
    if (!seen[c]) {
      row.values[c] = sum / static_cast<double>(present);
      row.missing[c] = true;
    }
  return row;
}

/// L_{k,i} between a client's local model and the global model over a probe set.
inline std::optional<LipschitzRow> estimate_lipschitz(const ModelSpec& spec, const ParamVector& local,
                                                      const ParamVector& global, const Dataset& probe) {
  detail::check_compatible(spec, local, probe);
  detail::check_compatible(spec, global, probe);
  detail::Workspace ws(spec);
  auto grad = [&](const ParamVector& theta, std::size_t i, std::vector<double>& out) {
    per_sample_grad_into(spec, theta, probe, i, out, ws);
  };
  const double dev = std::sqrt(squared_distance(local, global));
  return estimate_lipschitz_generic(grad, local, global, dev, std::span<const int>(probe.labels()), spec.classes);
}

/// Plug-in estimates for the SGD variance and gradient-norm bounds.
struct GradientStats {
  double sigma2 = 0.0;  // mean |g~ - g_bar|^2 over draws
  double G2 = 0.0;      // max |g~|^2 over draws
  double mean_norm2 = 0.0;  // |g_bar|^2
};

/// Draws `n_draws` mini-batches (without replacement inside a batch) from
/// `pool` and computes their gradients at `params`. A batch as large as the
/// pool is the whole pool, so sigma2 is then exactly zero.
inline GradientStats estimate_sgd_stats(const ModelSpec& spec, const ParamVector& params, const Dataset& ds,
                                        std::span<const std::size_t> pool, std::size_t batch_size,
                                        std::size_t n_draws, std::uint64_t seed) {
  detail::require(n_draws >= 2, "estimate_sgd_stats: n_draws must be >= 2");
  detail::require(batch_size >= 1, "estimate_sgd_stats: batch_size must be >= 1");
  detail::require(!pool.empty(), "estimate_sgd_stats: empty pool");
  Rng rng = make_rng(seed, {tag(Stream::kStats)});
  const std::size_t b = std::min(batch_size, pool.size());
  if (b == pool.size()) {
    // every draw is the full pool: no sampling noise
    const auto g = backward_grad(spec, params, ds, pool);
    return {0.0, g.squared_norm(), g.squared_norm()};
  }
  std::vector<std::size_t> scratch(pool.begin(), pool.end());
  std::vector<ParamVector> grads;
  grads.reserve(n_draws);
  for (std::size_t n = 0; n < n_draws; ++n) {
    if (b < scratch.size()) {
      // partial Fisher-Yates: the first b entries become the batch
      for (std::size_t i = 0; i < b; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, scratch.size() - 1);
        std::swap(scratch[i], scratch[pick(rng)]);
      }
    }
    grads.push_back(backward_grad(spec, params, ds, std::span<const std::size_t>(scratch.data(), b)));
  }
  ParamVector mean = ParamVector::zeros(spec);
  for (const auto& g : grads) mean += g;
  mean *= 1.0 / static_cast<double>(n_draws);
  GradientStats st;
  st.mean_norm2 = mean.squared_norm();
  for (const auto& g : grads) {
    st.sigma2 += squared_distance(g, mean);
    st.G2 = std::max(st.G2, g.squared_norm());
  }
  st.sigma2 /= static_cast<double>(n_draws);
  return st;
}

inline GradientStats estimate_sgd_stats(const ModelSpec& spec, const ParamVector& params, const Dataset& probe,
                                        std::size_t batch_size, std::size_t n_draws, std::uint64_t seed) {
  const auto rows = all_rows(probe);
  return estimate_sgd_stats(spec, params, probe, rows, batch_size, n_draws, seed);
}

}  // namespace isfl
