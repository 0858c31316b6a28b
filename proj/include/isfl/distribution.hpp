#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "isfl/errors.hpp"

namespace isfl {

/// Probability vector over C categories. Entries are non-negative and sum
/// to one within 1e-9; the constructor enforces this.
class CategoryDistribution {
public:
  static constexpr double kSumTolerance = 1e-9;

  CategoryDistribution() = default;

  explicit CategoryDistribution(std::vector<double> probs) : probs_(std::move(probs)) {
    detail::require(!probs_.empty(), "distribution must have at least one category");
    double sum = 0.0;
    for (double v : probs_) {
      detail::require(std::isfinite(v) && v >= 0.0, "distribution entries must be finite and >= 0");
      sum += v;
    }
    detail::require(std::abs(sum - 1.0) <= kSumTolerance,
                    "distribution entries must sum to 1 (got " + std::to_string(sum) + ")");
  }

  /// Normalizes a non-negative histogram. Throws if it is all zero.
  template <typename T>
  static CategoryDistribution from_counts(std::span<const T> counts) {
    double total = 0.0;
    for (T c : counts) total += static_cast<double>(c);
    detail::require(total > 0.0, "cannot normalize an empty histogram");
    std::vector<double> p(counts.size());
    for (std::size_t i = 0; i < counts.size(); ++i) p[i] = static_cast<double>(counts[i]) / total;
    return CategoryDistribution(std::move(p));
  }

  template <typename T>
  static CategoryDistribution from_counts(const std::vector<T>& counts) {
    return from_counts(std::span<const T>(counts));
  }

  static CategoryDistribution uniform(std::size_t classes) {
    detail::require(classes > 0, "uniform distribution needs C > 0");
    return CategoryDistribution(std::vector<double>(classes, 1.0 / static_cast<double>(classes)));
  }

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  const std::vector<double>& probs() const { return probs_; }
  std::span<const double> span() const { return probs_; }

  bool strictly_positive() const {
    for (double v : probs_)
      if (!(v > 0.0)) return false;
    return true;
  }

  friend bool operator==(const CategoryDistribution&, const CategoryDistribution&) = default;

private:
  std::vector<double> probs_;
};

/// Total-variation distance between two distributions of equal length.
inline double total_variation(const CategoryDistribution& a, const CategoryDistribution& b) {
  detail::require(a.size() == b.size(), "total_variation: length mismatch");
  double tv = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) tv += std::abs(a[i] - b[i]);
  return 0.5 * tv;
}

}  // namespace isfl
