// isfl: command-line driver for partitioning, federated runs, one-shot
// IS-weight solves, sampling-ratio sweeps and bound diagnostics.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "isfl/config.hpp"
#include "isfl/data_io.hpp"
#include "isfl/diagnostics.hpp"
#include "isfl/experiment.hpp"
#include "isfl/isweights.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace isfl;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string dataset;
  std::string input = "-";
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) c.seeds = {*o.seed};
  if (!o.out.empty()) c.out = o.out;
  if (!o.dataset.empty()) c.dataset = o.dataset;
  c.validate();
  return c;
}

fs::path ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + p.string());
  return os;
}

/// FNV-1a over the canonical config dump (minus the output directory) and seed.
std::string run_id(json config, std::uint64_t seed) {
  config.erase("out");
  std::uint64_t h = 1469598103934665603ULL;
  const std::string s = config.dump() + "#" + std::to_string(seed);
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json round_record(const RoundLog& log, const RoundMetrics& m) {
  json L = json::array();
  for (std::size_t k = 0; k < log.L.clients(); ++k) {
    const auto row = log.L.row(k);
    L.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"round", log.round},     {"epoch_tag", log.L.epoch_tag()}, {"L", L},
          {"q", log.q},             {"sigma2", log.sigma2},          {"G2", log.G2},
          {"rho", m.rho},           {"rho_theory", m.rho_theory},    {"lipschitz_missing", log.lipschitz_missing}};
}

struct Summary {
  std::vector<double> acc_S, acc_G;
};

std::string mean_sd(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%6.2f +- %5.2f", 100.0 * mean, 100.0 * sd);
  return buf;
}

/// One (strategy, seed) run with all artifacts written under `dir`.
RunResult run_one(const Prepared& prep, const ExperimentConfig& c, Strategy s, std::uint64_t seed,
                  const fs::path& dir, std::ostream& plot) {
  ensure_dir(dir);
  const RunResult r = run_strategy(prep, c, s, seed);
  const auto bounds = build_bounds(r, prep.p, c.eta, c.local_epochs);
  {
    auto os = open_out(dir / "metrics.csv");
    write_metrics_csv(os, r.metrics);
  }
  {
    auto os = open_out(dir / "bounds.csv");
    write_bounds_csv(os, bounds);
  }
  {
    auto os = open_out(dir / "diagnostics.jsonl");
    for (std::size_t i = 0; i < r.logs.size(); ++i) os << round_record(r.logs[i], r.metrics[i]).dump() << '\n';
  }
  {
    const json cfg = to_json(c);
    json manifest = {{"run_id", run_id(cfg, seed)}, {"strategy", to_string(s)}, {"seed", seed}, {"config", cfg}};
    auto os = open_out(dir / "manifest.json");
    os << manifest.dump(2) << '\n';
  }
  write_plot_rows(plot, to_string(s) + "/seed_" + std::to_string(seed), r.metrics, bounds);
  return r;
}

int cmd_partition(const Options& o) {
  const auto c = load(o);
  const std::uint64_t seed = c.seeds.front();
  const Dataset source = load_source(c, seed);
  const auto shards = sort_and_partition(source, c.partition(seed));
  const auto manifest = partition_manifest(source, c.partition(seed), shards);
  const fs::path dir = ensure_dir(c.out);
  {
    auto os = open_out(dir / "partition.json");
    os << manifest.dump(2) << '\n';
  }
  std::cout << "client  samples  histogram\n";
  for (const auto& s : shards) {
    std::cout << std::setw(6) << s.client_id << "  " << std::setw(7) << s.indices.size() << "  [";
    const auto h = s.histogram(source);
    for (std::size_t i = 0; i < h.size(); ++i) std::cout << (i ? " " : "") << h[i];
    std::cout << "]\n";
  }
  std::cout << "wrote " << (dir / "partition.json").string() << '\n';
  return 0;
}

int cmd_run(const Options& o) {
  const auto c = load(o);
  const fs::path root = ensure_dir(c.out);
  auto plot = open_out(root / "plot.csv");
  write_plot_header(plot);
  std::map<std::string, Summary> table;
  for (std::uint64_t seed : c.seeds) {
    const Prepared prep = prepare(c, seed);
    for (const auto& name : c.strategies) {
      const Strategy s = parse_strategy(name);
      const auto r = run_one(prep, c, s, seed, root / name / ("seed_" + std::to_string(seed)), plot);
      table[name].acc_S.push_back(r.metrics.back().acc_S);
      table[name].acc_G.push_back(r.metrics.back().acc_G);
    }
  }
  std::cout << "final round, " << c.seeds.size() << " seed(s), accuracy (%) mean +- sd\n";
  std::cout << "strategy      acc_S            acc_G\n";
  for (const auto& name : c.strategies)
    std::cout << std::left << std::setw(12) << name << std::right << "  " << mean_sd(table[name].acc_S) << "  "
              << mean_sd(table[name].acc_G) << '\n';
  return 0;
}

int cmd_bounds(const Options& o) {
  auto c = load(o);
  c.strategies = {"isfl"};
  const fs::path root = ensure_dir(c.out);
  auto plot = open_out(root / "plot.csv");
  write_plot_header(plot);
  for (std::uint64_t seed : c.seeds) {
    const Prepared prep = prepare(c, seed);
    const auto r = run_one(prep, c, Strategy::kIsfl, seed, root / "isfl" / ("seed_" + std::to_string(seed)), plot);
    const auto bounds = build_bounds(r, prep.p, c.eta, c.local_epochs);
    std::cout << "seed " << seed << "\nround  rho_realized  rho_theory  psi  lemma1_pass_rate  bound_rhs\n";
    for (const auto& b : bounds)
      std::cout << b.round << "  " << csv_number(b.rho_realized_mean) << "  " << csv_number(b.rho_theory_mean) << "  "
                << csv_number(b.psi) << "  " << csv_number(b.lemma1_pass_rate) << "  " << csv_number(b.bound_rhs)
                << '\n';
  }
  return 0;
}

int cmd_sweep_sr(const Options& o) {
  const auto c = load(o);
  const fs::path root = ensure_dir(c.out);
  auto os = open_out(root / "sweep_sr.csv");
  os << "strategy,sr,seed,acc_S,acc_G\n";
  for (std::uint64_t seed : c.seeds) {
    const Prepared prep = prepare(c, seed);
    for (const char* name : {"isfl", "rw_is", "fedavg"})
      for (double sr : c.sr_list) {
        const auto r = run_strategy(prep, c, parse_strategy(name), seed, sr);
        const auto& m = r.metrics.back();
        os << name << ',' << csv_number(sr) << ',' << seed << ',' << csv_number(m.acc_S) << ','
           << csv_number(m.acc_G) << '\n';
        std::cout << name << " sr=" << csv_number(sr) << " seed=" << seed << " acc_G=" << csv_number(m.acc_G)
                  << '\n';
      }
  }
  std::cout << "wrote " << (root / "sweep_sr.csv").string() << '\n';
  return 0;
}

json plan_json(const SamplingPlan& plan, const CategoryDistribution& p, std::span<const double> L) {
  return {{"gamma_star", plan.gamma_star}, {"q", plan.q}, {"w", plan.w}, {"rho", rho(plan.q, p.span(), L)}};
}

int cmd_solve(const Options& o) {
  json in;
  try {
    if (o.input == "-") {
      in = json::parse(std::cin);
    } else {
      std::ifstream f(o.input);
      if (!f) throw IoError("cannot open input file: " + o.input);
      in = json::parse(f);
    }
  } catch (const json::parse_error& e) {
    throw ArgumentError(std::string("solve: malformed JSON: ") + e.what());
  }
  std::vector<double> p, pk, L;
  double varpi = 0.05;
  try {
    in.at("p").get_to(p);
    in.at("p_k").get_to(pk);
    in.at("L").get_to(L);
    if (in.contains("varpi")) in.at("varpi").get_to(varpi);
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("solve: expected {p, p_k, L, varpi}: ") + e.what());
  }
  const CategoryDistribution P(p), PK(pk);
  const auto alpha = compute_alpha(L);
  const auto plan = water_filling_plan(P, PK, L, varpi);
  json out = plan_json(plan, P, L);
  out["alpha"] = alpha.alphas;
  out["alpha_degenerate"] = alpha.degenerate;
  out["exact"] = plan_json(solve_is_weights(P, PK, L, varpi), P, L);
  const std::string text = out.dump(2);
  if (o.out.empty()) {
    std::cout << text << '\n';
  } else {
    auto os = open_out(o.out);
    os << text << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"isfl: federated learning with local importance sampling"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "experiment config (flat JSON)");
    sub->add_option("--seed", o.seed, "run a single seed instead of the config's seed list");
    sub->add_option("--out", o.out, "output directory");
  };
  auto* partition = app.add_subcommand("partition", "partition a dataset and write the manifest");
  common(partition);
  partition->add_option("--dataset", o.dataset, "dataset path (binary container or .csv); overrides the config");
  auto* run = app.add_subcommand("run", "federated runs for every (strategy, seed)");
  common(run);
  auto* solve = app.add_subcommand("solve", "one-shot IS-weight solve: {p, p_k, L, varpi} -> plan");
  solve->add_option("--input", o.input, "input JSON file, '-' for stdin");
  solve->add_option("--out", o.out, "output file (default stdout)");
  auto* sweep = app.add_subcommand("sweep-sr", "final accuracy across sampling ratios");
  common(sweep);
  auto* bounds = app.add_subcommand("bounds", "ISFL run with bound diagnostics");
  common(bounds);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (partition->parsed()) return cmd_partition(o);
    if (run->parsed()) return cmd_run(o);
    if (solve->parsed()) return cmd_solve(o);
    if (sweep->parsed()) return cmd_sweep_sr(o);
    if (bounds->parsed()) return cmd_bounds(o);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 2;
  } catch (const CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
