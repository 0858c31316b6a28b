#pragma once

#include <random>
#include <vector>

#include "isfl/data.hpp"
#include "isfl/distribution.hpp"
#include "isfl/model.hpp"

namespace isfl::test {

/// Random probability vector; each entry is zeroed with probability `zero_prob`
/// (at least one entry stays positive).
inline std::vector<double> random_probs(std::mt19937_64& g, std::size_t C, double zero_prob = 0.0,
                                        double lo = 0.01) {
  std::uniform_real_distribution<double> u(lo, 1.0);
  std::bernoulli_distribution zero(zero_prob);
  std::vector<double> v(C);
  double s = 0.0;
  for (auto& x : v) {
    x = zero(g) ? 0.0 : u(g);
    s += x;
  }
  if (s == 0.0) {
    v[0] = 1.0;
    s = 1.0;
  }
  for (auto& x : v) x /= s;
  return v;
}

/// A shard over all rows of `ds`.
inline ClientShard whole_shard(const Dataset& ds, int id = 0) {
  ClientShard s;
  s.client_id = id;
  s.indices = all_rows(ds);
  s.local_distribution = CategoryDistribution::from_counts(s.histogram(ds));
  return s;
}

/// Shard over the given rows.
inline ClientShard shard_of(const Dataset& ds, std::vector<std::size_t> rows, int id = 0) {
  ClientShard s;
  s.client_id = id;
  s.indices = std::move(rows);
  s.local_distribution = CategoryDistribution::from_counts(s.histogram(ds));
  return s;
}

inline ModelSpec mlp(std::size_t d, std::size_t h, std::size_t C, Activation a = Activation::kTanh) {
  ModelSpec s;
  s.input_dim = d;
  if (h) s.hidden = {h};
  s.classes = C;
  s.activation = a;
  return s;
}

inline ModelSpec logistic(std::size_t d, std::size_t C) { return mlp(d, 0, C); }

}  // namespace isfl::test
