#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "isfl/errors.hpp"
#include "isfl/federation.hpp"
#include "isfl/model.hpp"

namespace isfl {

/// Every experiment setting as one flat key set.
struct ExperimentConfig {
  // data
  std::string dataset = "synthetic";  // "synthetic" or a path (.csv or binary container)
  int classes = 10;
  int per_class = 3000;
  int dim = 20;
  double separation = 2.0;
  double holdout_fraction = 0.1;
  double test_fraction = 0.15;
  int clients = 20;
  int shard_size = 500;
  int shards_per_client = 2;
  double nr = 0.95;
  // model
  std::vector<int> hidden = {16};
  std::string activation = "relu";
  // training
  int rounds = 25;
  int local_epochs = 5;
  int batch_size = 128;
  double eta = 1e-3;
  double sampling_ratio = 1.0;
  // federation
  std::vector<std::string> strategies = {"fedavg", "rw_is", "gradnorm_is", "isfl"};
  double varpi = 0.05;
  int probe_size = 500;
  std::string is_solver = "water_filling";
  std::vector<double> pi;
  int threads = 0;
  int stats_draws = 8;
  bool diagnostics = true;
  bool wall_clock = false;
  // runs
  std::vector<std::uint64_t> seeds = {0};
  std::vector<double> sr_list = {0.1, 0.25, 0.5, 1.0};
  std::string out = "out";

  void validate() const {
    detail::require(classes >= 2 && per_class >= 1 && dim >= 1, "config: bad dataset dimensions");
    detail::require(separation > 0.0, "config: separation must be > 0");
    detail::require(holdout_fraction > 0.0 && test_fraction > 0.0 && holdout_fraction + test_fraction < 1.0,
                    "config: holdout_fraction and test_fraction must be positive and sum below 1");
    partition().validate();
    model().validate();
    federation(Strategy::kIsfl, 0).validate();
    detail::require(!strategies.empty(), "config: strategies must not be empty");
    for (const auto& s : strategies) parse_strategy(s);
    detail::require(probe_size >= 1, "config: probe_size must be >= 1");
    detail::require(!seeds.empty(), "config: seeds must not be empty");
    detail::require(!sr_list.empty(), "config: sr_list must not be empty");
    for (double sr : sr_list) detail::require(sr > 0.0 && sr <= 1.0, "config: sr_list entries must lie in (0, 1]");
    if (!pi.empty()) validate_weights(pi, static_cast<std::size_t>(clients));
  }

  PartitionConfig partition(std::uint64_t seed = 0) const {
    return {clients, shard_size, shards_per_client, nr, seed};
  }

  ModelSpec model() const {
    ModelSpec m;
    m.input_dim = static_cast<std::size_t>(dim);
    for (int h : hidden) {
      detail::require(h >= 1, "config: hidden widths must be >= 1");
      m.hidden.push_back(static_cast<std::size_t>(h));
    }
    m.classes = static_cast<std::size_t>(classes);
    m.activation = parse_activation(activation);
    return m;
  }

  FederationConfig federation(Strategy s, std::uint64_t seed) const {
    FederationConfig f;
    f.rounds = rounds;
    f.trainer = {batch_size, local_epochs, eta, sampling_ratio, seed};
    f.pi = pi;
    f.strategy = s;
    f.varpi = varpi;
    f.solver = parse_is_solver(is_solver);
    f.seed = seed;
    f.threads = threads;
    f.diagnostics = diagnostics;
    f.stats_draws = static_cast<std::size_t>(std::max(stats_draws, 0));
    f.wall_clock = wall_clock;
    return f;
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"dataset", c.dataset},
          {"classes", c.classes},
          {"per_class", c.per_class},
          {"dim", c.dim},
          {"separation", c.separation},
          {"holdout_fraction", c.holdout_fraction},
          {"test_fraction", c.test_fraction},
          {"clients", c.clients},
          {"shard_size", c.shard_size},
          {"shards_per_client", c.shards_per_client},
          {"nr", c.nr},
          {"hidden", c.hidden},
          {"activation", c.activation},
          {"rounds", c.rounds},
          {"local_epochs", c.local_epochs},
          {"batch_size", c.batch_size},
          {"eta", c.eta},
          {"sampling_ratio", c.sampling_ratio},
          {"strategies", c.strategies},
          {"varpi", c.varpi},
          {"probe_size", c.probe_size},
          {"is_solver", c.is_solver},
          {"pi", c.pi},
          {"threads", c.threads},
          {"stats_draws", c.stats_draws},
          {"diagnostics", c.diagnostics},
          {"wall_clock", c.wall_clock},
          {"seeds", c.seeds},
          {"sr_list", c.sr_list},
          {"out", c.out}};
}

/// Reads known keys over the defaults. Unknown keys are rejected so typos
/// fail loudly.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ArgumentError("config: top level must be a JSON object");
  ExperimentConfig c;
  const auto known = to_json(c);
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.contains(it.key())) throw ArgumentError("config: unknown key '" + it.key() + "'");
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception& e) {
      throw ArgumentError(std::string("config: bad value for '") + key + "': " + e.what());
    }
  };
  get("dataset", c.dataset);
  get("classes", c.classes);
  get("per_class", c.per_class);
  get("dim", c.dim);
  get("separation", c.separation);
  get("holdout_fraction", c.holdout_fraction);
  get("test_fraction", c.test_fraction);
  get("clients", c.clients);
  get("shard_size", c.shard_size);
  get("shards_per_client", c.shards_per_client);
  get("nr", c.nr);
  get("hidden", c.hidden);
  get("activation", c.activation);
  get("rounds", c.rounds);
  get("local_epochs", c.local_epochs);
  get("batch_size", c.batch_size);
  get("eta", c.eta);
  get("sampling_ratio", c.sampling_ratio);
  get("strategies", c.strategies);
  get("varpi", c.varpi);
  get("probe_size", c.probe_size);
  get("is_solver", c.is_solver);
  get("pi", c.pi);
  get("threads", c.threads);
  get("stats_draws", c.stats_draws);
  get("diagnostics", c.diagnostics);
  get("wall_clock", c.wall_clock);
  get("seeds", c.seeds);
  get("sr_list", c.sr_list);
  get("out", c.out);
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ArgumentError("config: malformed JSON in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

}  // namespace isfl
