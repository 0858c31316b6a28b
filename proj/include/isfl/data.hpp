#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "isfl/distribution.hpp"
#include "isfl/errors.hpp"
#include "isfl/rng.hpp"

namespace isfl {

/// Labeled samples: an N x d row-major feature matrix and labels in [0, C).
class Dataset {
public:
  Dataset() = default;

  Dataset(std::vector<double> features, std::vector<int> labels, std::size_t dim, std::size_t classes)
      : features_(std::move(features)), labels_(std::move(labels)), dim_(dim), classes_(classes) {
    detail::require(dim_ > 0, "dataset dimension must be positive");
    detail::require(classes_ > 0, "dataset must have at least one category");
    detail::require(!labels_.empty(), "dataset must contain at least one sample");
    detail::require(features_.size() == labels_.size() * dim_,
                    "feature matrix size does not match labels x dim");
    for (int y : labels_)
      detail::require(y >= 0 && static_cast<std::size_t>(y) < classes_, "label out of range");
  }

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t classes() const { return classes_; }

  std::span<const double> row(std::size_t i) const { return {features_.data() + i * dim_, dim_}; }
  int label(std::size_t i) const { return labels_[i]; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<double>& features() const { return features_; }

  /// Copies the selected rows into a new dataset (same dim and C).
  Dataset subset(std::span<const std::size_t> rows) const {
    detail::require(!rows.empty(), "subset must be non-empty");
    std::vector<double> f;
    f.reserve(rows.size() * dim_);
    std::vector<int> y;
    y.reserve(rows.size());
    for (std::size_t r : rows) {
      detail::require(r < size(), "subset row out of range");
      auto x = row(r);
      f.insert(f.end(), x.begin(), x.end());
      y.push_back(labels_[r]);
    }
    return Dataset(std::move(f), std::move(y), dim_, classes_);
  }

  std::vector<std::size_t> label_histogram() const {
    std::vector<std::size_t> h(classes_, 0);
    for (int y : labels_) ++h[static_cast<std::size_t>(y)];
    return h;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

private:
  std::vector<double> features_;
  std::vector<int> labels_;
  std::size_t dim_ = 0;
  std::size_t classes_ = 0;
};

/// Rows of `ds` grouped by label; `out[c]` keeps the input order.
inline std::vector<std::vector<std::size_t>> rows_by_label(const Dataset& ds,
                                                           std::span<const std::size_t> rows) {
  std::vector<std::vector<std::size_t>> out(ds.classes());
  for (std::size_t r : rows) out[static_cast<std::size_t>(ds.label(r))].push_back(r);
  return out;
}

inline std::vector<std::size_t> all_rows(const Dataset& ds) {
  std::vector<std::size_t> r(ds.size());
  std::iota(r.begin(), r.end(), std::size_t{0});
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Class anchors depend only on (C, d): datasets drawn with different seeds
/// share the same class geometry, so train/holdout/test sets are compatible.
inline std::vector<double> class_anchors(std::size_t classes, std::size_t dim) {
  Rng rng = make_rng(0x15F1A7C4ULL, {tag(Stream::kAnchors), classes, dim});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> anchors(classes * dim);
  for (std::size_t c = 0; c < classes; ++c) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      double v = normal(rng);
      anchors[c * dim + j] = v;
      norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t j = 0; j < dim; ++j) anchors[c * dim + j] *= inv;
  }
  return anchors;
}

/// C * per_class samples; class c is N(separation * anchor_c, I_d).
/// Samples are emitted class by class.
inline Dataset generate_synthetic(int classes, int per_class, int dim, double separation,
                                  std::uint64_t seed) {
  detail::require(classes >= 2, "generate_synthetic: C must be >= 2");
  detail::require(per_class >= 1, "generate_synthetic: per_class must be >= 1");
  detail::require(dim >= 2, "generate_synthetic: d must be >= 2");
  detail::require(separation > 0.0 && std::isfinite(separation),
                  "generate_synthetic: separation must be > 0");
  const auto C = static_cast<std::size_t>(classes);
  const auto d = static_cast<std::size_t>(dim);
  const auto anchors = class_anchors(C, d);
  Rng rng = make_rng(seed, {tag(Stream::kData)});
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> f;
  f.reserve(C * static_cast<std::size_t>(per_class) * d);
  std::vector<int> y;
  y.reserve(C * static_cast<std::size_t>(per_class));
  for (std::size_t c = 0; c < C; ++c) {
    for (int n = 0; n < per_class; ++n) {
      for (std::size_t j = 0; j < d; ++j) f.push_back(separation * anchors[c * d + j] + normal(rng));
      y.push_back(static_cast<int>(c));
    }
  }
  return Dataset(std::move(f), std::move(y), d, C);
}

// ---------------------------------------------------------------------------
// Train / holdout / test

/// Clients only ever see `train`; the Lipschitz probe comes from `holdout`.
struct DataSplits {
  Dataset train;
  Dataset holdout;
  Dataset test;
};

/// Stratified three-way split. Per class, the first `test_fraction` of a
/// shuffled class pool goes to test, the next `holdout_fraction` to holdout.
inline DataSplits split_dataset(const Dataset& ds, double holdout_fraction, double test_fraction,
                                std::uint64_t seed) {
  detail::require(holdout_fraction > 0.0 && test_fraction > 0.0 &&
                      holdout_fraction + test_fraction < 1.0,
                  "split fractions must be positive and sum to < 1");
  Rng rng = make_rng(seed, {tag(Stream::kSplit)});
  auto pools = rows_by_label(ds, all_rows(ds));
  std::vector<std::size_t> train, holdout, test;
  for (auto& pool : pools) {
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto n = pool.size();
    const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(n)));
    const auto n_hold = static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(n)));
    for (std::size_t i = 0; i < n; ++i) {
      if (i < n_test)
        test.push_back(pool[i]);
      else if (i < n_test + n_hold)
        holdout.push_back(pool[i]);
      else
        train.push_back(pool[i]);
    }
  }
  if (train.empty() || holdout.empty() || test.empty())
    throw CapacityError("split_dataset: dataset too small for the requested fractions");
  std::sort(train.begin(), train.end());
  std::sort(holdout.begin(), holdout.end());
  std::sort(test.begin(), test.end());
  return {ds.subset(train), ds.subset(holdout), ds.subset(test)};
}

// ---------------------------------------------------------------------------
// Sort-and-partition

struct PartitionConfig {
  int clients = 20;
  int shard_size = 500;
  int shards_per_client = 2;
  double nr = 0.95;
  std::uint64_t seed = 0;

  void validate() const {
    detail::require(clients >= 1, "partition: K must be >= 1");
    detail::require(shard_size >= 1, "partition: shard_size must be >= 1");
    detail::require(shards_per_client >= 1, "partition: shards_per_client must be >= 1");
    detail::require(nr >= 0.0 && nr <= 1.0, "partition: nr must lie in [0, 1]");
  }
};

struct ClientShard {
  int client_id = 0;
  std::vector<std::size_t> indices;  // rows of the parent dataset, ascending
  CategoryDistribution local_distribution;

  std::vector<std::size_t> histogram(const Dataset& ds) const {
    std::vector<std::size_t> h(ds.classes(), 0);
    for (std::size_t r : indices) ++h[static_cast<std::size_t>(ds.label(r))];
    return h;
  }
};

/// Samples per shard drawn from one label block (the rest are class-balanced).
inline int skewed_count(int shard_size, double nr) {
  // The epsilon keeps e.g. 0.9 * 100 from rounding up to 91.
  const double raw = std::ceil(nr * static_cast<double>(shard_size) - 1e-9);
  return std::clamp(static_cast<int>(raw), 0, shard_size);
}

/// Label-skew split. Each shard takes ceil(nr * shard_size) rows from a
/// contiguous block of the label-sorted data and the remainder class-balanced
/// across all categories; clients receive shards_per_client random shards.
/// Shards never share rows. Throws CapacityError when the data runs out and
/// ArgumentError if some category ends up absent from every client.
inline std::vector<ClientShard> sort_and_partition(const Dataset& ds, const PartitionConfig& cfg) {
  cfg.validate();
  const auto C = ds.classes();
  const auto n_shards = static_cast<std::size_t>(cfg.clients) * static_cast<std::size_t>(cfg.shards_per_client);
  const auto s = static_cast<std::size_t>(cfg.shard_size);
  if (n_shards * s > ds.size())
    throw CapacityError("sort_and_partition: need " + std::to_string(n_shards * s) + " samples, dataset has " +
                        std::to_string(ds.size()));
  const auto skew = static_cast<std::size_t>(skewed_count(cfg.shard_size, cfg.nr));
  const auto uni = s - skew;

  Rng rng = make_rng(cfg.seed, {tag(Stream::kPartition)});
  auto pools = rows_by_label(ds, all_rows(ds));
  for (std::size_t c = 0; c < C; ++c)
    if (pools[c].empty())
      throw ArgumentError("sort_and_partition: category " + std::to_string(c) + " has no samples in the dataset");
  for (auto& pool : pools) std::shuffle(pool.begin(), pool.end(), rng);

  std::vector<std::vector<std::size_t>> shards(n_shards);

  // Class-balanced part: uni / C per class, remainder to a random subset of classes.
  if (uni > 0) {
    std::vector<std::size_t> order(C);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (auto& shard : shards) {
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t k = 0; k < C; ++k) {
        const std::size_t c = order[k];
        const std::size_t quota = uni / C + (k < uni % C ? 1 : 0);
        if (pools[c].size() < quota)
          throw CapacityError("sort_and_partition: category " + std::to_string(c) +
                              " has too few samples for the uniform shard fraction");
        shard.insert(shard.end(), pools[c].end() - static_cast<std::ptrdiff_t>(quota), pools[c].end());
        pools[c].resize(pools[c].size() - quota);
      }
    }
  }

  // Skewed part: label-sorted remainder cut into equal segments, one per shard.
  if (skew > 0) {
    std::vector<std::size_t> sorted;
    for (const auto& pool : pools) sorted.insert(sorted.end(), pool.begin(), pool.end());
    const std::size_t segment = sorted.size() / n_shards;
    if (segment < skew)
      throw CapacityError("sort_and_partition: too few samples left for the skewed shard fraction");
    for (std::size_t j = 0; j < n_shards; ++j) {
      auto first = sorted.begin() + static_cast<std::ptrdiff_t>(j * segment);
      shards[j].insert(shards[j].end(), first, first + static_cast<std::ptrdiff_t>(skew));
    }
  }

  std::vector<std::size_t> shard_order(n_shards);
  std::iota(shard_order.begin(), shard_order.end(), std::size_t{0});
  std::shuffle(shard_order.begin(), shard_order.end(), rng);

  std::vector<ClientShard> out;
  out.reserve(static_cast<std::size_t>(cfg.clients));
  std::vector<std::size_t> pooled(C, 0);
  for (int k = 0; k < cfg.clients; ++k) {
    ClientShard cs;
    cs.client_id = k;
    for (int m = 0; m < cfg.shards_per_client; ++m) {
      const auto& sh = shards[shard_order[static_cast<std::size_t>(k * cfg.shards_per_client + m)]];
      cs.indices.insert(cs.indices.end(), sh.begin(), sh.end());
    }
    std::sort(cs.indices.begin(), cs.indices.end());
    const auto h = cs.histogram(ds);
    for (std::size_t c = 0; c < C; ++c) pooled[c] += h[c];
    cs.local_distribution = CategoryDistribution::from_counts(h);
    out.push_back(std::move(cs));
  }
  for (std::size_t c = 0; c < C; ++c)
    if (pooled[c] == 0)
      throw ArgumentError("sort_and_partition: category " + std::to_string(c) +
                          " is absent from every client; the global distribution must be strictly positive");
  return out;
}

/// Pooled label distribution over all client rows.
inline CategoryDistribution global_distribution(const Dataset& ds, std::span<const ClientShard> shards) {
  detail::require(!shards.empty(), "global_distribution: no shards");
  std::vector<std::size_t> h(ds.classes(), 0);
  for (const auto& s : shards)
    for (std::size_t r : s.indices) ++h[static_cast<std::size_t>(ds.label(r))];
  return CategoryDistribution::from_counts(h);
}

/// Union of all client rows (the pooled client data), ascending.
inline std::vector<std::size_t> pooled_rows(std::span<const ClientShard> shards) {
  std::vector<std::size_t> rows;
  for (const auto& s : shards) rows.insert(rows.end(), s.indices.begin(), s.indices.end());
  std::sort(rows.begin(), rows.end());
  return rows;
}

/// Label-stratified subset of the holdout. Classes are served round-robin in
/// a seeded order, so counts differ by at most one while every class has rows
/// left.
inline Dataset select_probe_set(const Dataset& holdout, std::size_t size, std::uint64_t seed) {
  detail::require(size >= 1, "select_probe_set: size must be >= 1");
  if (size > holdout.size())
    throw CapacityError("select_probe_set: holdout has " + std::to_string(holdout.size()) +
                        " samples, requested " + std::to_string(size));
  Rng rng = make_rng(seed, {tag(Stream::kProbe)});
  auto pools = rows_by_label(holdout, all_rows(holdout));
  for (auto& pool : pools) std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<std::size_t> order(pools.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::size_t> taken(pools.size(), 0);
  std::vector<std::size_t> rows;
  rows.reserve(size);
  while (rows.size() < size) {
    for (std::size_t c : order) {
      if (rows.size() == size) break;
      if (taken[c] < pools[c].size()) rows.push_back(pools[c][taken[c]++]);
    }
  }
  std::sort(rows.begin(), rows.end());
  return holdout.subset(rows);
}

}  // namespace isfl
