#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "isfl/config.hpp"
#include "isfl/data.hpp"
#include "isfl/data_io.hpp"
#include "isfl/federation.hpp"
#include "isfl/model.hpp"

namespace isfl {

/// Everything a run needs, derived from one config and one seed.
struct Prepared {
  ModelSpec spec;
  Dataset train, holdout, test, probe;
  std::vector<ClientShard> shards;
  CategoryDistribution p;
  ParamVector init;
};

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline Dataset load_source(const ExperimentConfig& c, std::uint64_t seed) {
  if (c.dataset == "synthetic") return generate_synthetic(c.classes, c.per_class, c.dim, c.separation, seed);
  if (ends_with(c.dataset, ".csv")) return load_dataset_csv(c.dataset, static_cast<std::size_t>(c.classes));
  return load_dataset(c.dataset);
}

inline Prepared prepare(const ExperimentConfig& c, std::uint64_t seed) {
  c.validate();
  const Dataset source = load_source(c, seed);
  auto splits = split_dataset(source, c.holdout_fraction, c.test_fraction, seed);
  Prepared out{c.model(), std::move(splits.train), std::move(splits.holdout), std::move(splits.test),
               Dataset{}, {}, CategoryDistribution::uniform(1), ParamVector{}};
  detail::require(out.train.dim() == out.spec.input_dim, "dataset dimension does not match config.dim");
  out.probe = select_probe_set(out.holdout, static_cast<std::size_t>(c.probe_size), seed);
  out.shards = sort_and_partition(out.train, c.partition(seed));
  out.p = global_distribution(out.train, out.shards);
  out.init = init_params(out.spec, seed);
  return out;
}

inline RunResult run_strategy(const Prepared& prep, const ExperimentConfig& c, Strategy s, std::uint64_t seed,
                              double sampling_ratio = -1.0) {
  auto fc = c.federation(s, seed);
  if (sampling_ratio > 0.0) fc.trainer.sampling_ratio = sampling_ratio;
  return run(prep.spec, prep.init, prep.train, prep.shards, prep.probe, prep.test, fc);
}

}  // namespace isfl
