#pragma once

// Convergence-bound diagnostics computed from run logs.
//
// Time t counts local SGD iterations; t_c is the iteration of the latest
// aggregation. SGD noise estimates are held constant within a round.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "isfl/distribution.hpp"
#include "isfl/errors.hpp"
#include "isfl/federation.hpp"
#include "isfl/isweights.hpp"

namespace isfl {

/// SGD noise plug-ins at one iteration.
struct StepStats {
  std::vector<double> sigma2;  // per client
  double G2 = 0.0;
};

/// psi = (1/T) sum_t [eta * Lbar * sum_k pi_k sigma_k^2(t) + 2 C G^2(t)]
inline double psi(std::span<const StepStats> window, std::span<const double> pi, double eta, double Lbar,
                  std::size_t C) {
  detail::require(!window.empty(), "psi: empty window");
  double total = 0.0;
  for (const auto& s : window) {
    detail::require(s.sigma2.size() == pi.size(), "psi: sigma2 length must equal the client count");
    double noise = 0.0;
    for (std::size_t k = 0; k < pi.size(); ++k) noise += pi[k] * s.sigma2[k];
    total += eta * Lbar * noise + 2.0 * static_cast<double>(C) * s.G2;
  }
  return total / static_cast<double>(window.size());
}

/// phi_k(t) = sum over tau in [t_c, t) of (K+1) G^2 + sigma_k^2 + sum_l pi_l sigma_l^2.
/// `since_aggregation` holds the stats at t_c, ..., t-1.
inline double phi(std::size_t k, std::span<const StepStats> since_aggregation, std::span<const double> pi) {
  const double K = static_cast<double>(pi.size());
  double total = 0.0;
  for (const auto& s : since_aggregation) {
    detail::require(k < s.sigma2.size() && s.sigma2.size() == pi.size(), "phi: client index out of range");
    double mix = 0.0;
    for (std::size_t l = 0; l < pi.size(); ++l) mix += pi[l] * s.sigma2[l];
    total += (K + 1.0) * s.G2 + s.sigma2[k] + mix;
  }
  return total;
}

struct LemmaCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = true;
};

/// |theta_k - theta_bar|^2 <= 2 eta^2 E_l phi_k(t). Soft check: the noise
/// constants are estimates.
inline LemmaCheck lemma1_check(double eta, std::size_t period, double measured_dev2, double phi_k) {
  LemmaCheck c;
  c.lhs = measured_dev2;
  c.rhs = 2.0 * eta * eta * static_cast<double>(period) * phi_k;
  c.holds = c.lhs <= c.rhs;
  return c;
}

/// Convergence bound RHS: 2 (l0 - l*) / (eta T) + psi + (2 eta^2 E_l / T) sum_k pi_k rho_k sum_t phi_k(t).
inline double bound_rhs(double loss_start, double loss_star, double eta, std::size_t T, std::size_t period,
                        double psi_value, std::span<const double> pi, std::span<const double> rho_k,
                        std::span<const double> phi_sum_k) {
  detail::require(T >= 1, "bound_rhs: empty window");
  const double Td = static_cast<double>(T);
  const double gap = std::max(0.0, loss_start - loss_star);
  double out = eta > 0.0 ? 2.0 * gap / (eta * Td) : 0.0;
  out += psi_value;
  double mix = 0.0;
  for (std::size_t k = 0; k < pi.size(); ++k) mix += pi[k] * rho_k[k] * phi_sum_k[k];
  out += 2.0 * eta * eta * static_cast<double>(period) / Td * mix;
  return out;
}

/// sum_i p_i sum_k pi_k L_{k,i}
inline double average_lipschitz(const LipschitzMatrix& L, const CategoryDistribution& p, std::span<const double> pi) {
  double s = 0.0;
  for (std::size_t k = 0; k < L.clients(); ++k)
    for (std::size_t i = 0; i < L.classes(); ++i) s += pi[k] * p[i] * L.at(k, i);
  return s;
}

struct BoundRecord {
  int round = 0;
  std::vector<double> rho_realized;  // per client
  std::vector<double> rho_theory;    // per client
  double psi = 0.0;
  std::vector<double> phi;           // per client, at the last iteration of the round
  double L_bar = 0.0;
  std::vector<double> dev2;          // per client, at the last local epoch
  std::vector<double> lemma1_rhs;    // per client, at the last local epoch
  double lemma1_pass_rate = 1.0;     // over (client, epoch) pairs
  double bound_rhs = 0.0;

  double rho_realized_mean = 0.0;
  double rho_theory_mean = 0.0;
  double phi_mean = 0.0;
  double dev_mean = 0.0;
};

/// Per-round mean rho of the realized plans and of the exact minimizers,
/// recomputed from logged plans and Lipschitz matrices.
inline std::vector<std::pair<double, double>> rho_trajectory(std::span<const RoundLog> logs,
                                                             const CategoryDistribution& p,
                                                             std::span<const CategoryDistribution> pk,
                                                             std::span<const double> pi, double varpi) {
  detail::require(!logs.empty(), "rho_trajectory: no round logs");
  std::vector<std::pair<double, double>> out;
  for (const auto& log : logs) {
    detail::require(log.q.size() == pk.size() && log.L.clients() == pk.size(), "rho_trajectory: incomplete round log");
    double realized = 0.0, theory = 0.0;
    for (std::size_t k = 0; k < pk.size(); ++k) {
      realized += pi[k] * rho(log.q[k], p.span(), log.L.row(k));
      theory += pi[k] * rho(solve_is_weights(p, pk[k], log.L.row(k), varpi).q, p.span(), log.L.row(k));
    }
    out.emplace_back(realized, theory);
  }
  return out;
}

/// Builds one bound record per round. The window is one round; L_bar uses
/// the Lipschitz matrix measured at the end of the round.
inline std::vector<BoundRecord> build_bounds(const RunResult& run, const CategoryDistribution& p, double eta,
                                             int local_epochs) {
  detail::require(!run.logs.empty() && run.logs.size() == run.metrics.size(), "build_bounds: missing run logs");
  const auto& pi = run.pi;
  const std::size_t K = pi.size();
  const auto E = static_cast<std::size_t>(local_epochs);
  double loss_star = std::numeric_limits<double>::infinity();
  for (const auto& m : run.metrics) loss_star = std::min(loss_star, m.loss);
  for (const auto& l : run.logs) loss_star = std::min(loss_star, l.loss_start);

  std::size_t T = 1;
  for (std::size_t s : run.steps_per_epoch) T = std::max(T, s * E);

  std::vector<BoundRecord> out;
  for (std::size_t r = 0; r < run.logs.size(); ++r) {
    const auto& log = run.logs[r];
    const auto& m = run.metrics[r];
    const LipschitzMatrix& L_end = r + 1 < run.logs.size() ? run.logs[r + 1].L : run.final_L;
    const StepStats stats{log.sigma2, log.G2};

    BoundRecord b;
    b.round = log.round;
    b.rho_realized = m.rho;
    b.rho_theory = m.rho_theory;
    b.rho_realized_mean = m.rho_mean;
    b.rho_theory_mean = m.rho_theory_mean;
    b.L_bar = average_lipschitz(L_end, p, pi);
    b.psi = psi(std::span<const StepStats>(&stats, 1), pi, eta, b.L_bar, p.size());

    std::size_t pairs = 0, passed = 0;
    std::vector<double> phi_sum(K, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
      const std::size_t steps = run.steps_per_epoch[k];
      const double per_step = phi(k, std::span<const StepStats>(&stats, 1), pi);
      for (std::size_t e = 1; e <= log.dev2[k].size(); ++e) {
        const auto c = lemma1_check(eta, steps * E, log.dev2[k][e - 1], per_step * static_cast<double>(e * steps));
        ++pairs;
        passed += c.holds ? 1 : 0;
        if (e == log.dev2[k].size()) {
          b.dev2.push_back(c.lhs);
          b.lemma1_rhs.push_back(c.rhs);
        }
      }
      const double n = static_cast<double>(steps * E);
      b.phi.push_back(per_step * n);
      phi_sum[k] = per_step * n * (n - 1.0) / 2.0;  // sum over t of (t - t_c)
    }
    if (b.dev2.empty()) {
      b.dev2.assign(K, 0.0);
      b.lemma1_rhs.assign(K, 0.0);
    }
    b.lemma1_pass_rate = pairs ? static_cast<double>(passed) / static_cast<double>(pairs) : 1.0;
    b.phi_mean = detail::weighted_mean(b.phi, pi);
    b.dev_mean = detail::weighted_mean(b.dev2, pi);
    b.bound_rhs = bound_rhs(log.loss_start, loss_star, eta, T, T, b.psi, pi, b.rho_realized, phi_sum);
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV output. Numbers use a fixed format so reruns are byte-identical.

inline std::string csv_number(double v) {
  if (!std::isfinite(v)) throw ArgumentError("refusing to write a non-finite value");
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void write_metrics_csv(std::ostream& os, std::span<const RoundMetrics> metrics) {
  os << "round,loss,acc_S,acc_G,rho_mean,rho_theory,secs\n";
  for (const auto& m : metrics)
    os << m.round << ',' << csv_number(m.loss) << ',' << csv_number(m.acc_S) << ',' << csv_number(m.acc_G) << ','
       << csv_number(m.rho_mean) << ',' << csv_number(m.rho_theory_mean) << ',' << csv_number(m.secs) << '\n';
}

inline void write_bounds_csv(std::ostream& os, std::span<const BoundRecord> records) {
  os << "round,rho_realized,rho_theory,psi,phi_mean,dev_mean,lemma1_pass_rate\n";
  for (const auto& b : records)
    os << b.round << ',' << csv_number(b.rho_realized_mean) << ',' << csv_number(b.rho_theory_mean) << ','
       << csv_number(b.psi) << ',' << csv_number(b.phi_mean) << ',' << csv_number(b.dev_mean) << ','
       << csv_number(b.lemma1_pass_rate) << '\n';
}

/// Long format: one (run, round, series, value) row per data point.
inline void write_plot_header(std::ostream& os) { os << "run,round,series,value\n"; }

inline void write_plot_rows(std::ostream& os, const std::string& run_label, std::span<const RoundMetrics> metrics,
                            std::span<const BoundRecord> records) {
  auto row = [&](int round, const char* series, double v) {
    os << run_label << ',' << round << ',' << series << ',' << csv_number(v) << '\n';
  };
  for (const auto& m : metrics) {
    row(m.round, "loss", m.loss);
    row(m.round, "acc_S", m.acc_S);
    row(m.round, "acc_G", m.acc_G);
  }
  for (const auto& b : records) {
    row(b.round, "rho_realized", b.rho_realized_mean);
    row(b.round, "rho_theory", b.rho_theory_mean);
    row(b.round, "psi", b.psi);
    row(b.round, "phi_mean", b.phi_mean);
    row(b.round, "dev_mean", b.dev_mean);
    row(b.round, "lemma1_pass_rate", b.lemma1_pass_rate);
    row(b.round, "L_bar", b.L_bar);
    row(b.round, "bound_rhs", b.bound_rhs);
  }
}

}  // namespace isfl
