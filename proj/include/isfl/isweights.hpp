#pragma once

// Optimal local importance-sampling probabilities.
//
// Per client the target is
//   rho(q) = (1 + sum_i (p_i - q_i)^2) * (sum_i q_i L_i^2)
// minimized over { sum q = 1, q_i >= varpi * pk_i }.
//
// Two solvers live here:
//  * water_filling_plan: the closed form q = p + alpha * Gamma* with Gamma*
//    the largest step along alpha that keeps every category above its floor.
//    This is the plan clients train with under the ISFL strategy.
//  * solve_is_weights: the exact minimizer. Stationarity gives
//    q_j = max(f_j, p_j + u - v L_j^2) with v = A / 2B > 0, so every optimum
//    is the floored-simplex projection of p - v L^2 for some v >= 0. The
//    solver walks that piecewise-affine curve and minimizes the cubic
//    rho on each piece.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "isfl/distribution.hpp"
#include "isfl/errors.hpp"

namespace isfl {

struct AlphaVector {
  std::vector<double> alphas;
  bool degenerate = false;  // all L equal: alpha is identically zero
};

/// Zero-sum, unit-norm Lipschitz gap factor.
///   g_j = 1 - C L_j^2 / sum_i L_i^2,   alpha = g / |g|
inline AlphaVector compute_alpha(std::span<const double> L) {
  detail::require(!L.empty(), "compute_alpha: empty L row");
  double s = 0.0;
  for (double v : L) {
    detail::require(std::isfinite(v) && v >= 0.0, "compute_alpha: L entries must be finite and >= 0");
    s += v * v;
  }
  detail::require(s > 0.0, "compute_alpha: L row is all zero");
  const double C = static_cast<double>(L.size());
  AlphaVector a;
  a.alphas.resize(L.size());
  double n2 = 0.0;
  for (std::size_t j = 0; j < L.size(); ++j) {
    a.alphas[j] = 1.0 - C * L[j] * L[j] / s;
    n2 += a.alphas[j] * a.alphas[j];
  }
  const double norm = std::sqrt(n2);
  if (norm < 1e-12) {
    std::fill(a.alphas.begin(), a.alphas.end(), 0.0);
    a.degenerate = true;
    return a;
  }
  for (auto& v : a.alphas) v /= norm;
  return a;
}

/// Per-category IS plan for one client.
struct SamplingPlan {
  std::vector<double> q;     // resampling probabilities over categories
  std::vector<double> w;     // q_i / pk_i on the local support, 0 elsewhere
  double gamma_star = 0.0;   // |q - p| at the solution (Gamma* for the water-filling plan)
  double floor = 0.0;        // lowest IS weight varpi

  /// Checks sum q = 1, q >= floor * pk, w = q / pk and sum pk w = 1.
  /// Returns an empty string when the plan is valid.
  std::string check(const CategoryDistribution& pk) const {
    if (q.size() != pk.size() || w.size() != pk.size()) return "plan size does not match distribution";
    double sq = 0.0, spw = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
      if (!std::isfinite(q[i]) || q[i] < 0.0) return "q entry negative or non-finite";
      if (q[i] < floor * pk[i] - 1e-12) return "q below its floor at category " + std::to_string(i);
      if (pk[i] > 0.0) {
        if (std::abs(w[i] - q[i] / pk[i]) > 1e-9 * std::max(1.0, std::abs(w[i]))) return "w != q / pk";
        spw += pk[i] * w[i];
      } else if (q[i] != 0.0) {
        return "mass on a category the client does not hold";
      }
      sq += q[i];
    }
    if (std::abs(sq - 1.0) > 1e-9) return "q does not sum to 1";
    if (std::abs(spw - 1.0) > 1e-9) return "sum pk * w != 1";
    return {};
  }
};

/// rho(q) = (1 + sum (p_i - q_i)^2) * (sum q_i L_i^2)
inline double rho(std::span<const double> q, std::span<const double> p, std::span<const double> L) {
  if (q.size() != p.size() || q.size() != L.size()) throw ArgumentError("rho: length mismatch");
  double a = 1.0, b = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double d = p[i] - q[i];
    a += d * d;
    b += q[i] * L[i] * L[i];
  }
  return a * b;
}

inline double rho(const CategoryDistribution& q, const CategoryDistribution& p, std::span<const double> L) {
  return rho(q.span(), p.span(), L);
}

/// Partial derivatives of rho: 2 (q_j - p_j) B + L_j^2 A. At a constrained
/// optimum they are equal across every category strictly above its floor.
inline std::vector<double> rho_partials(std::span<const double> q, std::span<const double> p,
                                        std::span<const double> L) {
  if (q.size() != p.size() || q.size() != L.size()) throw ArgumentError("rho_partials: length mismatch");
  double a = 1.0, b = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    a += (p[i] - q[i]) * (p[i] - q[i]);
    b += q[i] * L[i] * L[i];
  }
  std::vector<double> g(q.size());
  for (std::size_t j = 0; j < q.size(); ++j) g[j] = 2.0 * (q[j] - p[j]) * b + L[j] * L[j] * a;
  return g;
}

namespace detail {

inline void check_solver_inputs(const CategoryDistribution& p, const CategoryDistribution& pk,
                                std::span<const double> L, double varpi) {
  require(p.size() == pk.size() && p.size() == L.size(), "IS solver: p, pk and L must have equal length");
  require(p.strictly_positive(), "IS solver: global distribution p must be strictly positive");
  require(varpi >= 0.0 && varpi < 1.0, "IS solver: varpi must lie in [0, 1)");
  for (double v : L) require(std::isfinite(v) && v >= 0.0, "IS solver: L entries must be finite and >= 0");
}

inline std::vector<double> floors(const CategoryDistribution& pk, double varpi) {
  std::vector<double> f(pk.size());
  for (std::size_t i = 0; i < pk.size(); ++i) f[i] = varpi * pk[i];
  return f;
}

inline void fill_weights(SamplingPlan& plan, const CategoryDistribution& pk) {
  plan.w.assign(pk.size(), 0.0);
  for (std::size_t i = 0; i < pk.size(); ++i)
    if (pk[i] > 0.0) plan.w[i] = plan.q[i] / pk[i];
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Water level tau with sum_j max(f_j, y_j - tau) = 1 over `support`.
inline double projection_level(std::span<const double> y, std::span<const double> f,
                               std::span<const std::size_t> support) {
  double budget = 1.0;
  std::vector<double> z;
  z.reserve(support.size());
  for (std::size_t j : support) {
    budget -= f[j];
    z.push_back(y[j] - f[j]);
  }
  std::sort(z.begin(), z.end(), std::greater<>());
  double cum = 0.0, tau = 0.0;
  for (std::size_t m = 0; m < z.size(); ++m) {
    cum += z[m];
    const double t = (cum - budget) / static_cast<double>(m + 1);
    if (m + 1 == z.size() || z[m + 1] <= t) {
      tau = t;
      break;
    }
  }
  return tau;
}

inline std::vector<std::size_t> support_of(const CategoryDistribution& pk) {
  std::vector<std::size_t> s;
  for (std::size_t i = 0; i < pk.size(); ++i)
    if (pk[i] > 0.0) s.push_back(i);
  return s;
}

}  // namespace detail

/// Euclidean projection of y onto { q_j >= f_j on support, q_j = 0 off it, sum q = 1 }.
inline std::vector<double> project_floored_simplex(std::span<const double> y, std::span<const double> f,
                                                   std::span<const std::size_t> support) {
  detail::require(!support.empty(), "projection: empty support");
  const double tau = detail::projection_level(y, f, support);
  std::vector<double> q(y.size(), 0.0);
  for (std::size_t j : support) q[j] = f[j] + std::max(0.0, y[j] - f[j] - tau);
  return q;
}

struct GammaChoice {
  double gamma = 0.0;
  std::optional<std::size_t> binding;  // category whose floor fixes Gamma*
};

/// Largest step along alpha keeping p + alpha * Gamma above the floors:
/// min over alpha_j < 0 of (p_j - varpi pk_j) / (-alpha_j), or 0 when no
/// alpha is negative. Floors above p_j are clamped to p_j. Ties go to the
/// lowest index.
inline GammaChoice choose_gamma(const CategoryDistribution& p, const CategoryDistribution& pk,
                                const AlphaVector& alpha, double varpi) {
  detail::require(alpha.alphas.size() == p.size() && pk.size() == p.size(), "compute_gamma_star: length mismatch");
  detail::require(varpi >= 0.0 && varpi < 1.0, "compute_gamma_star: varpi must lie in [0, 1)");
  GammaChoice best;
  double best_val = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (!(alpha.alphas[j] < 0.0)) continue;
    const double floor = std::min(varpi * pk[j], p[j]);
    const double cand = (p[j] - floor) / -alpha.alphas[j];
    if (cand >= 0.0 && cand < best_val) {
      best_val = cand;
      best.binding = j;
    }
  }
  if (best.binding) best.gamma = best_val;
  return best;
}

inline double compute_gamma_star(const CategoryDistribution& p, const CategoryDistribution& pk,
                                 const AlphaVector& alpha, double varpi) {
  return choose_gamma(p, pk, alpha, varpi).gamma;
}

/// Closed-form water-filling plan: q_j = max(varpi pk_j, p_j + alpha_j Gamma*).
///
/// If p_j < varpi pk_j for some j the closed form can land below a floor;
/// the result is then projected onto the feasible set. Mass on categories
/// the client does not hold is dropped and the rest rescaled.
inline SamplingPlan water_filling_plan(const CategoryDistribution& p, const CategoryDistribution& pk,
                                       std::span<const double> L, double varpi) {
  detail::check_solver_inputs(p, pk, L, varpi);
  const auto alpha = compute_alpha(L);
  const auto choice = choose_gamma(p, pk, alpha, varpi);
  const auto f = detail::floors(pk, varpi);
  const auto support = detail::support_of(pk);

  SamplingPlan plan;
  plan.floor = varpi;
  plan.gamma_star = choice.gamma;
  plan.q.resize(p.size());
  bool hypothesis_holds = true;
  for (std::size_t j = 0; j < p.size(); ++j) {
    plan.q[j] = std::max(f[j], p[j] + alpha.alphas[j] * choice.gamma);
    if (p[j] < f[j]) hypothesis_holds = false;
  }
  if (choice.binding && hypothesis_holds) plan.q[*choice.binding] = f[*choice.binding];

  if (!hypothesis_holds) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true))
      std::fprintf(stderr, "isfl: warning: p_j < varpi * pk_j for some category; projecting the water-filling plan "
                           "(reported once)\n");
    for (std::size_t j = 0; j < p.size(); ++j)
      if (pk[j] == 0.0) plan.q[j] = 0.0;
    plan.q = project_floored_simplex(plan.q, f, support);
  } else if (support.size() < p.size()) {
    double kept = 0.0;
    for (std::size_t j : support) kept += plan.q[j];
    for (std::size_t j = 0; j < p.size(); ++j) plan.q[j] = pk[j] > 0.0 ? plan.q[j] / kept : 0.0;
  }
  detail::fill_weights(plan, pk);
  return plan;
}

/// Exact minimizer of rho over the feasible set (q_j = 0 where pk_j = 0).
/// `gamma_star` reports |q* - p|.
inline SamplingPlan solve_is_weights(const CategoryDistribution& p, const CategoryDistribution& pk,
                                     std::span<const double> L, double varpi) {
  detail::check_solver_inputs(p, pk, L, varpi);
  const std::size_t C = p.size();
  const auto f = detail::floors(pk, varpi);
  const auto support = detail::support_of(pk);
  const auto P = p.span();
  std::vector<double> L2(C);
  for (std::size_t j = 0; j < C; ++j) L2[j] = L[j] * L[j];

  constexpr double kTie = 1e-13;
  std::vector<double> y(C), slack(C), q(C), dq(C), cand(C);
  std::vector<double> best_q;
  double best = std::numeric_limits<double>::infinity();
  auto consider = [&](const std::vector<double>& qc) {
    const double r = rho(qc, P, L);
    if (r < best) {
      best = r;
      best_q = qc;
    }
  };

  double v = 0.0;
  const std::size_t max_pieces = 16 * C + 64;
  for (std::size_t piece = 0; piece < max_pieces; ++piece) {
    for (std::size_t j = 0; j < C; ++j) y[j] = P[j] - v * L2[j];
    const double tau = detail::projection_level(y, f, support);
    std::fill(q.begin(), q.end(), 0.0);
    for (std::size_t j : support) {
      slack[j] = y[j] - f[j] - tau;
      q[j] = f[j] + std::max(0.0, slack[j]);
    }

    // Free set just to the right of v. Coordinates sitting exactly on their
    // floor join it iff their L^2 is at most the free-set mean.
    std::vector<std::size_t> free_set, ties;
    for (std::size_t j : support) {
      if (slack[j] > kTie)
        free_set.push_back(j);
      else if (slack[j] >= -kTie)
        ties.push_back(j);
    }
    std::sort(ties.begin(), ties.end(), [&](std::size_t a, std::size_t b) { return L2[a] < L2[b]; });
    double sum_l2 = 0.0;
    for (std::size_t j : free_set) sum_l2 += L2[j];
    std::size_t take = ties.size();
    for (std::size_t k = free_set.empty() ? 1 : 0; k <= ties.size(); ++k) {
      double s = sum_l2;
      for (std::size_t m = 0; m < k; ++m) s += L2[ties[m]];
      const double mean = s / static_cast<double>(free_set.size() + k);
      const bool in_ok = k == 0 || L2[ties[k - 1]] <= mean * (1.0 + 1e-12);
      const bool out_ok = k == ties.size() || L2[ties[k]] >= mean * (1.0 - 1e-12);
      if (in_ok && out_ok) {
        take = k;
        break;
      }
    }
    std::vector<bool> is_free(C, false);
    for (std::size_t j : free_set) is_free[j] = true;
    for (std::size_t m = 0; m < take; ++m) {
      is_free[ties[m]] = true;
      sum_l2 += L2[ties[m]];
    }
    const std::size_t n_free = free_set.size() + take;
    const double mean_l2 = sum_l2 / static_cast<double>(n_free);

    // Affine model on this piece and the distance to its end.
    double h_end = std::numeric_limits<double>::infinity();
    bool moving = false;
    std::fill(dq.begin(), dq.end(), 0.0);
    for (std::size_t j : support) {
      const double slope = mean_l2 - L2[j];
      if (is_free[j]) {
        dq[j] = slope;
        if (slope != 0.0) moving = true;
        if (slope < 0.0 && slack[j] > kTie) h_end = std::min(h_end, slack[j] / -slope);
      } else if (slope > 0.0 && slack[j] < -kTie) {
        h_end = std::min(h_end, -slack[j] / slope);
      }
    }

    consider(q);
    if (!moving) break;

    // rho(h) = A(h) B(h) with A quadratic and B linear in h.
    double a0 = 1.0, a1 = 0.0, a2 = 0.0, b0 = 0.0, b1 = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      const double e = q[j] - P[j];
      a0 += e * e;
      a1 += 2.0 * e * dq[j];
      a2 += dq[j] * dq[j];
      b0 += q[j] * L2[j];
      b1 += dq[j] * L2[j];
    }
    const double c2 = 3.0 * a2 * b1, c1 = 2.0 * (a2 * b0 + a1 * b1), c0 = a1 * b0 + a0 * b1;
    std::vector<double> roots;
    if (std::abs(c2) > 1e-300) {
      const double disc = c1 * c1 - 4.0 * c2 * c0;
      if (disc >= 0.0) {
        const double sq = std::sqrt(disc);
        const double qq = -0.5 * (c1 + std::copysign(sq, c1));
        if (qq != 0.0) roots.push_back(qq / c2);
        if (qq != 0.0) roots.push_back(c0 / qq);
        else roots.push_back(0.0);
      }
    } else if (c1 != 0.0) {
      roots.push_back(-c0 / c1);
    }
    for (double h : roots) {
      if (!(h > 0.0) || !(h < h_end)) continue;
      for (std::size_t j = 0; j < C; ++j) cand[j] = q[j] + h * dq[j];
      consider(cand);
    }
    if (!std::isfinite(h_end)) break;
    for (std::size_t j = 0; j < C; ++j) cand[j] = std::max(q[j] + h_end * dq[j], pk[j] > 0.0 ? f[j] : 0.0);
    consider(cand);
    v += h_end;
  }

  SamplingPlan plan;
  plan.floor = varpi;
  plan.q = std::move(best_q);
  plan.gamma_star = detail::distance(plan.q, P);
  detail::fill_weights(plan, pk);
  return plan;
}

/// Stationary step along alpha when no floor binds: the smaller root of
/// d/dGamma [(1 + Gamma^2)(P + S Gamma)] = 0 with P = sum p L^2 and
/// S = sum alpha L^2. nullopt if alpha is degenerate or no root exists.
inline std::optional<double> interior_stationary_gamma(const CategoryDistribution& p, const AlphaVector& alpha,
                                                       std::span<const double> L) {
  if (alpha.degenerate) return std::nullopt;
  double P = 0.0, S = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    P += p[j] * L[j] * L[j];
    S += alpha.alphas[j] * L[j] * L[j];
  }
  if (!(S < 0.0)) return std::nullopt;
  const double disc = P * P - 3.0 * S * S;
  if (disc < 0.0) return std::nullopt;
  return (P - std::sqrt(disc)) / (-3.0 * S);
}

struct OracleResult {
  std::vector<double> q;
  double rho = 0.0;
};

/// Exhaustive grid search over the feasible set, used as an independent
/// check on the solvers. The grid is laid on f + (1 - sum f) * simplex, so
/// floor boundaries are grid points. Categories absent locally stay at 0.
inline OracleResult brute_force_rho_min(const CategoryDistribution& p, const CategoryDistribution& pk,
                                        std::span<const double> L, double varpi, double grid_step) {
  if (p.size() > 5) throw CapacityError("brute_force_rho_min: C must be <= 5");
  detail::check_solver_inputs(p, pk, L, varpi);
  detail::require(grid_step > 0.0 && grid_step <= 0.01, "brute_force_rho_min: grid_step must lie in (0, 0.01]");
  const auto f = detail::floors(pk, varpi);
  const auto support = detail::support_of(pk);
  const int n = static_cast<int>(std::lround(1.0 / grid_step));
  double budget = 1.0;
  for (std::size_t j : support) budget -= f[j];

  OracleResult best{{}, std::numeric_limits<double>::infinity()};
  std::vector<double> q(p.size(), 0.0);
  std::vector<int> counts(support.size(), 0);
  auto visit = [&](auto&& self, std::size_t idx, int remaining) -> void {
    if (idx + 1 == support.size()) {
      counts[idx] = remaining;
      for (std::size_t m = 0; m < support.size(); ++m)
        q[support[m]] = f[support[m]] + budget * static_cast<double>(counts[m]) / n;
      const double r = rho(q, p.span(), L);
      if (r < best.rho) best = {q, r};
      return;
    }
    for (int c = 0; c <= remaining; ++c) {
      counts[idx] = c;
      self(self, idx + 1, remaining - c);
    }
  };
  visit(visit, 0, n);
  return best;
}

}  // namespace isfl
