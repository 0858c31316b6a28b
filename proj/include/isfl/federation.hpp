#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "isfl/data.hpp"
#include "isfl/distribution.hpp"
#include "isfl/errors.hpp"
#include "isfl/isweights.hpp"
#include "isfl/lipschitz.hpp"
#include "isfl/model.hpp"
#include "isfl/rng.hpp"
#include "isfl/trainer.hpp"

namespace isfl {

enum class Strategy { kFedAvg, kRwIs, kGradNormIs, kIsfl };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kFedAvg: return "fedavg";
    case Strategy::kRwIs: return "rw_is";
    case Strategy::kGradNormIs: return "gradnorm_is";
    case Strategy::kIsfl: return "isfl";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "fedavg") return Strategy::kFedAvg;
  if (s == "rw_is") return Strategy::kRwIs;
  if (s == "gradnorm_is") return Strategy::kGradNormIs;
  if (s == "isfl") return Strategy::kIsfl;
  throw ArgumentError("unknown strategy: " + s);
}

/// Which solver produces ISFL training plans.
enum class IsSolver { kWaterFilling, kExact };

inline std::string to_string(IsSolver s) { return s == IsSolver::kExact ? "exact" : "water_filling"; }

inline IsSolver parse_is_solver(const std::string& s) {
  if (s == "water_filling") return IsSolver::kWaterFilling;
  if (s == "exact") return IsSolver::kExact;
  throw ArgumentError("unknown is_solver: " + s);
}

/// Inputs handed to a plan override.
struct PlanRequest {
  std::size_t client = 0;
  const CategoryDistribution& p;
  const CategoryDistribution& pk;
  std::span<const double> L;
  double varpi = 0.0;
};

using PlanSolver = std::function<SamplingPlan(const PlanRequest&)>;

struct FederationConfig {
  int rounds = 25;
  TrainerConfig trainer;
  std::vector<double> pi;  // empty: proportional to shard sizes
  Strategy strategy = Strategy::kIsfl;
  double varpi = 0.05;
  IsSolver solver = IsSolver::kWaterFilling;
  PlanSolver plan_override;  // replaces the ISFL solver when set
  std::uint64_t seed = 0;
  int threads = 0;              // 0: ISFL_THREADS or hardware concurrency
  bool diagnostics = true;      // SGD stats and per-epoch deviations
  std::size_t stats_draws = 8;  // mini-batches per client for sigma2 / G2
  bool wall_clock = false;      // record elapsed seconds (breaks byte-identical CSVs)
  bool keep_history = false;    // keep the global params of every round

  void validate() const {
    trainer.validate();
    detail::require(rounds >= 1, "federation: rounds must be >= 1");
    detail::require(varpi >= 0.0 && varpi < 1.0, "federation: varpi must lie in [0, 1)");
    detail::require(stats_draws >= 2, "federation: stats_draws must be >= 2");
  }
};

/// Client weights proportional to shard sizes.
inline std::vector<double> size_weights(std::span<const ClientShard> shards) {
  double total = 0.0;
  for (const auto& s : shards) total += static_cast<double>(s.indices.size());
  std::vector<double> pi;
  for (const auto& s : shards) pi.push_back(static_cast<double>(s.indices.size()) / total);
  return pi;
}

inline void validate_weights(std::span<const double> pi, std::size_t K) {
  detail::require(pi.size() == K, "client weights: length must equal the client count");
  double s = 0.0;
  for (double v : pi) {
    detail::require(std::isfinite(v) && v >= 0.0, "client weights must be finite and >= 0");
    s += v;
  }
  detail::require(std::abs(s - 1.0) <= 1e-9, "client weights must sum to 1");
}

/// sum_k pi_k theta_k.
inline ParamVector aggregate(std::span<const ParamVector> params, std::span<const double> pi) {
  detail::require(!params.empty(), "aggregate: no parameters");
  validate_weights(pi, params.size());
  for (const auto& p : params) detail::require(p.same_layout(params[0]), "aggregate: layout mismatch");
  ParamVector out = params[0];
  out *= pi[0];
  for (std::size_t k = 1; k < params.size(); ++k) out.axpy(pi[k], params[k]);
  return out;
}

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Mean loss and top-1 accuracy over `rows`.
inline Evaluation evaluate(const ModelSpec& spec, const ParamVector& params, const Dataset& ds,
                           std::span<const std::size_t> rows) {
  detail::check_compatible(spec, params, ds);
  detail::require(!rows.empty(), "evaluate: empty set");
  detail::Workspace ws(spec);
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t r : rows) {
    loss += detail::sample_loss_grad(spec, params, ds.row(r), ds.label(r), 0.0, nullptr, ws);
    const auto& logits = ws.pre.back();
    const auto pred = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    correct += pred == ds.label(r) ? 1 : 0;
  }
  const double n = static_cast<double>(rows.size());
  return {loss / n, static_cast<double>(correct) / n};
}

inline Evaluation evaluate(const ModelSpec& spec, const ParamVector& params, const Dataset& ds) {
  const auto rows = all_rows(ds);
  return evaluate(spec, params, ds, rows);
}

struct RoundMetrics {
  int round = 0;
  double loss = 0.0;   // mean loss over pooled client data
  double acc_S = 0.0;  // standard test set
  double acc_G = 0.0;  // pooled client data
  std::vector<double> rho;         // per client, realized plan
  std::vector<double> rho_theory;  // per client, exact minimum
  double rho_mean = 0.0;           // pi-weighted
  double rho_theory_mean = 0.0;
  double secs = 0.0;
};

/// Raw per-round record used by the diagnostics module.
struct RoundLog {
  int round = 0;
  LipschitzMatrix L{1, 1};                    // L in force while the round trained
  std::vector<std::vector<double>> q;         // plan used per client
  std::vector<double> sigma2;                 // per client, at the round-start global model
  double G2 = 0.0;                            // max over clients
  std::vector<std::vector<double>> dev2;      // [client][epoch-1]: |theta_k - theta_bar|^2
  std::vector<bool> lipschitz_missing;        // any category filled from the row mean
  double loss_start = 0.0;                    // global loss at the round-start model
};

struct RunResult {
  std::vector<RoundMetrics> metrics;
  std::vector<RoundLog> logs;
  LipschitzMatrix final_L{1, 1};
  ParamVector final_params;
  std::vector<ParamVector> history;  // global params after each round (keep_history)
  std::vector<double> pi;
  std::vector<std::size_t> steps_per_epoch;  // SGD iterations per local epoch, per client
};

namespace detail {

inline int thread_count(int requested, std::size_t work) {
  int n = requested;
  if (n <= 0) {
    n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("ISFL_THREADS")) {
      const int cap = std::atoi(env);
      if (cap >= 1) n = std::min(n, cap);
    }
  }
  return std::max(1, std::min<int>(n, static_cast<int>(work)));
}

/// Runs fn(i) for i in [0, n). Output placement is by index, so results do
/// not depend on scheduling. The lowest-index exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const int t = thread_count(threads, n);
  if (t <= 1) {
    for (std::size_t i = 0; i < n; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < t; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) guarded(i);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <typename Fn>
auto with_round(int round, Fn&& fn) -> decltype(fn()) {
  const std::string at = "round " + std::to_string(round) + ": ";
  try {
    return fn();
  } catch (const ArgumentError& e) {
    throw ArgumentError(at + e.what());
  } catch (const CapacityError& e) {
    throw CapacityError(at + e.what());
  } catch (const IoError& e) {
    throw IoError(at + e.what());
  }
}

inline double weighted_mean(std::span<const double> v, std::span<const double> pi) {
  double s = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) s += pi[k] * v[k];
  return s;
}

}  // namespace detail

/// Federated training with full participation.
///
/// Per round: every client trains E_l local epochs from the global model
/// under its current plan; the server aggregates, re-estimates the Lipschitz
/// matrix on the probe set and, for ISFL, recomputes the plans. Rounds start
/// with w = 1 for every strategy and L = 1.
inline RunResult run(const ModelSpec& spec, const ParamVector& init, const Dataset& train,
                     std::span<const ClientShard> shards, const Dataset& probe, const Dataset& test,
                     const FederationConfig& cfg) {
  cfg.validate();
  spec.validate();
  detail::require(!shards.empty(), "run: no clients");
  detail::check_compatible(spec, init, train);
  detail::check_compatible(spec, init, test);
  detail::check_compatible(spec, init, probe);
  const std::size_t K = shards.size();
  const std::size_t C = train.classes();

  RunResult out;
  out.pi = cfg.pi.empty() ? size_weights(shards) : cfg.pi;
  validate_weights(out.pi, K);
  for (const auto& s : shards) {
    const auto n = samples_per_epoch(s.indices.size(), cfg.trainer.sampling_ratio);
    const auto b = static_cast<std::size_t>(cfg.trainer.batch_size);
    out.steps_per_epoch.push_back((n + b - 1) / b);
  }

  const CategoryDistribution p = global_distribution(train, shards);
  const auto pooled = pooled_rows(shards);
  std::vector<CategoryDistribution> pk;
  for (const auto& s : shards) pk.push_back(s.local_distribution);

  LipschitzMatrix L(K, C);
  std::vector<SamplingPlan> plans;
  for (std::size_t k = 0; k < K; ++k) plans.push_back(identity_plan(pk[k]));
  std::vector<std::vector<double>> sample_probs(K);  // GradNorm-IS, empty means uniform

  ParamVector global = init;
  const auto t0 = std::chrono::steady_clock::now();
  const int E = cfg.trainer.local_epochs;
  const auto B = static_cast<std::size_t>(cfg.trainer.batch_size);

  for (int t = 1; t <= cfg.rounds; ++t) {
    detail::with_round(t, [&] {
      RoundLog log;
      log.round = t;
      log.L = L;
      log.L.set_epoch_tag(static_cast<long>(t - 1) * E);
      for (const auto& pl : plans) log.q.push_back(pl.q);
      log.sigma2.assign(K, 0.0);
      log.dev2.assign(K, std::vector<double>(static_cast<std::size_t>(E), 0.0));

      std::vector<ParamVector> local(K);
      std::vector<std::vector<ParamVector>> snapshots(K);
      std::vector<double> g2(K, 0.0);

      detail::parallel_for(K, cfg.threads, [&](std::size_t k) {
        const auto& shard = shards[k];
        if (cfg.diagnostics) {
          const auto st = estimate_sgd_stats(spec, global, train, shard.indices, B, cfg.stats_draws,
                                             cfg.seed ^ (static_cast<std::uint64_t>(t) << 32 | k));
          log.sigma2[k] = st.sigma2;
          g2[k] = st.G2;
        }
        TrainerConfig tc = cfg.trainer;
        Rng rng = make_rng(cfg.seed, {tag(Stream::kTrain), static_cast<std::uint64_t>(t), k});
        auto hook = [&](int, const ParamVector& th) {
          if (cfg.diagnostics) snapshots[k].push_back(th);
        };
        if (cfg.strategy == Strategy::kGradNormIs && !sample_probs[k].empty()) {
          PerSampleSampler sampler(shard.indices, sample_probs[k]);
          local[k] = local_train(spec, global, train, shard.indices.size(), sampler, tc, rng, hook);
        } else {
          CategorySampler sampler(train, shard, plans[k].q);
          local[k] = local_train(spec, global, train, shard.indices.size(), sampler, tc, rng, hook);
        }
      });
      log.G2 = *std::max_element(g2.begin(), g2.end());
      log.loss_start = evaluate(spec, global, train, pooled).loss;

      if (cfg.diagnostics) {
        for (int e = 0; e < E; ++e) {
          std::vector<ParamVector> at_e;
          for (std::size_t k = 0; k < K; ++k) at_e.push_back(snapshots[k][static_cast<std::size_t>(e)]);
          const auto virtual_global = aggregate(at_e, out.pi);
          for (std::size_t k = 0; k < K; ++k)
            log.dev2[k][static_cast<std::size_t>(e)] = squared_distance(at_e[k], virtual_global);
        }
      }

      // rho of the plans used this round, under the L they were computed with
      RoundMetrics m;
      m.round = t;
      for (std::size_t k = 0; k < K; ++k) {
        m.rho.push_back(rho(plans[k].q, p.span(), L.row(k)));
        m.rho_theory.push_back(rho(solve_is_weights(p, pk[k], L.row(k), cfg.varpi).q, p.span(), L.row(k)));
      }
      m.rho_mean = detail::weighted_mean(m.rho, out.pi);
      m.rho_theory_mean = detail::weighted_mean(m.rho_theory, out.pi);

      global = aggregate(local, out.pi);

      // Lipschitz refresh; a zero deviation keeps the previous row
      std::vector<std::optional<LipschitzRow>> rows(K);
      detail::parallel_for(K, cfg.threads,
                           [&](std::size_t k) { rows[k] = estimate_lipschitz(spec, local[k], global, probe); });
      log.lipschitz_missing.assign(K, false);
      for (std::size_t k = 0; k < K; ++k) {
        if (!rows[k]) continue;
        L.set_row(k, rows[k]->values);
        log.lipschitz_missing[k] = std::any_of(rows[k]->missing.begin(), rows[k]->missing.end(), [](bool b) { return b; });
      }
      L.set_epoch_tag(static_cast<long>(t) * E);

      // plans for the next round
      for (std::size_t k = 0; k < K; ++k) {
        switch (cfg.strategy) {
          case Strategy::kFedAvg: break;
          case Strategy::kRwIs: plans[k] = rw_plan(pk[k]); break;
          case Strategy::kGradNormIs: break;
          case Strategy::kIsfl:
            if (cfg.plan_override)
              plans[k] = cfg.plan_override(PlanRequest{k, p, pk[k], L.row(k), cfg.varpi});
            else if (cfg.solver == IsSolver::kExact)
              plans[k] = solve_is_weights(p, pk[k], L.row(k), cfg.varpi);
            else
              plans[k] = water_filling_plan(p, pk[k], L.row(k), cfg.varpi);
            break;
        }
      }
      if (cfg.strategy == Strategy::kGradNormIs)
        detail::parallel_for(K, cfg.threads,
                             [&](std::size_t k) { sample_probs[k] = gradnorm_plan(spec, global, train, shards[k]); });

      const auto eg = evaluate(spec, global, train, pooled);
      m.loss = eg.loss;
      m.acc_G = eg.accuracy;
      m.acc_S = evaluate(spec, global, test).accuracy;
      if (cfg.wall_clock)
        m.secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      out.metrics.push_back(std::move(m));
      out.logs.push_back(std::move(log));
      if (cfg.keep_history) out.history.push_back(global);
    });
  }
  out.final_L = L;
  out.final_params = global;
  return out;
}

/// Plain mini-batch SGD on one pooled dataset, organised in the same
/// round/epoch blocks and RNG streams as a single-client federated run.
inline std::vector<ParamVector> train_centralized(const ModelSpec& spec, const ParamVector& init,
                                                  const Dataset& train, const ClientShard& data,
                                                  const TrainerConfig& cfg, int rounds, std::uint64_t seed) {
  std::vector<ParamVector> history;
  ParamVector params = init;
  for (int t = 1; t <= rounds; ++t) {
    CategorySampler sampler(train, data, data.local_distribution.probs());
    Rng rng = make_rng(seed, {tag(Stream::kTrain), static_cast<std::uint64_t>(t), 0});
    params = local_train(spec, params, train, data.indices.size(), sampler, cfg, rng);
    history.push_back(params);
  }
  return history;
}

}  // namespace isfl
