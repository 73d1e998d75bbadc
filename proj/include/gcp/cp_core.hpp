#pragma once

// Weighted quantile calibration, threshold prediction sets and the exact
// finite-sample coverage laws used to validate them.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "gcp/errors.hpp"

namespace gcp {

/// A conformity score (higher = more conforming) and its calibration weight.
struct WeightedSample {
  double score = 0.0;
  double weight = 1.0;
};

namespace detail {

inline void check_level(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
}

inline void check_samples(std::span<const WeightedSample> samples) {
  if (samples.empty()) throw DomainError("weighted quantile of an empty sample");
  double total = 0.0;
  for (const auto& s : samples) {
    if (!std::isfinite(s.weight) || s.weight < 0.0) throw DomainError("weights must be finite and nonnegative");
    // +inf is admitted so that the test point can be represented explicitly.
    if (std::isnan(s.score) || s.score == -std::numeric_limits<double>::infinity())
      throw DomainError("scores must be finite or +inf");
    total += s.weight;
  }
  if (!(total > 0.0)) throw DomainError("total calibration weight must be positive");
}

/// Stable ascending sort by score; equal scores keep their input order.
inline std::vector<WeightedSample> sorted_by_score(std::span<const WeightedSample> samples) {
  std::vector<WeightedSample> sorted(samples.begin(), samples.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const WeightedSample& a, const WeightedSample& b) { return a.score < b.score; });
  return sorted;
}

/// Cumulative fractions (sum_{j<=i} w_j) / (sum_j w_j + test_mass) over an already sorted sample.
inline std::vector<double> cumulative_fractions(std::span<const WeightedSample> sorted, double test_mass) {
  double total = 0.0;
  for (const auto& s : sorted) total += s.weight;
  const double denom = total + test_mass;
  std::vector<double> out;
  out.reserve(sorted.size());
  double cum = 0.0;
  for (const auto& s : sorted) {
    cum += s.weight;
    out.push_back(cum / denom);
  }
  return out;
}

/// First index whose cumulative fraction reaches alpha; nullopt when none does.
inline std::optional<std::size_t> first_qualifying(std::span<const double> fractions, double alpha) {
  for (std::size_t i = 0; i < fractions.size(); ++i)
    if (fractions[i] >= alpha) return i;
  return std::nullopt;
}

}  // namespace detail

/// inf{ s_(i) : (sum_{j<=i} w_(j)) / (sum_j w_j + 1) >= alpha } over the ascending
/// sort of the samples. Throws InsufficientCalibrationMass when no index qualifies.
inline double weighted_quantile(std::span<const WeightedSample> samples, double alpha) {
  detail::check_level(alpha);
  detail::check_samples(samples);
  const auto sorted = detail::sorted_by_score(samples);
  const auto fractions = detail::cumulative_fractions(sorted, 1.0);
  const auto idx = detail::first_qualifying(fractions, alpha);
  if (!idx) throw InsufficientCalibrationMass(alpha, fractions.back());
  return sorted[*idx].score;
}

/// Quantile over the pool {samples} u {(+inf, test_weight)}, with fractions
/// normalized by the pool mass. Never runs out of mass; returns +inf when the
/// finite samples alone do not reach alpha.
inline double augmented_weighted_quantile(std::span<const WeightedSample> samples, double alpha,
                                          double test_weight = 1.0) {
  detail::check_level(alpha);
  if (!std::isfinite(test_weight) || test_weight <= 0.0) throw DomainError("test weight must be positive");
  std::vector<WeightedSample> pool(samples.begin(), samples.end());
  pool.push_back({std::numeric_limits<double>::infinity(), test_weight});
  detail::check_samples(pool);
  const auto sorted = detail::sorted_by_score(pool);
  const auto fractions = detail::cumulative_fractions(sorted, 0.0);
  // The +inf element closes the pool at fraction 1, so some index always qualifies.
  return sorted[*detail::first_qualifying(fractions, alpha)].score;
}

/// Largest cumulative calibration fraction (sum_{j<=i} w_(j)) / (sum w + 1) that does
/// not exceed alpha, or 0 when even the first sorted sample overshoots it.
inline double attainable_level(std::span<const WeightedSample> samples, double alpha) {
  detail::check_level(alpha);
  detail::check_samples(samples);
  const auto sorted = detail::sorted_by_score(samples);
  const auto fractions = detail::cumulative_fractions(sorted, 1.0);
  const double ceiling = alpha * (1.0 + 1e-12);
  double level = 0.0;
  for (double f : fractions)
    if (f <= ceiling) level = std::max(level, f);
  return level;
}

/// Calibration threshold used by the engines: the weighted quantile evaluated at
/// the attainable level of alpha. A test point whose conformity score is exchangeable
/// with the calibration scores falls below it with probability at most alpha, and
/// for uniform weights it is the floor((n+1) alpha)-th smallest calibration score.
/// Returns -inf (every label admitted) when no calibration fraction fits under alpha.
inline double conformal_threshold(std::span<const WeightedSample> samples, double alpha) {
  const double level = attainable_level(samples, alpha);
  if (level <= 0.0) return -std::numeric_limits<double>::infinity();
  return weighted_quantile(samples, level);
}

/// Labels whose score reaches the threshold (inclusive), in label order.
inline std::vector<int> prediction_set(std::span<const double> label_scores, double q) {
  if (std::isnan(q)) throw DomainError("threshold must not be NaN");
  std::vector<int> labels;
  for (std::size_t y = 0; y < label_scores.size(); ++y)
    if (label_scores[y] >= q) labels.push_back(static_cast<int>(y));
  return labels;
}

// ---------------------------------------------------------------------------
// Coverage laws

inline double log_binomial(std::int64_t n, std::int64_t k) {
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

namespace detail {

inline void check_hypergeom(std::int64_t pop, std::int64_t draws, std::int64_t successes) {
  if (pop < 0 || draws < 0 || successes < 0 || draws > pop || successes > pop)
    throw DomainError("hypergeometric parameters out of range");
}

/// Sum of the hypergeometric pmf over [from, to] (already clipped to the support).
inline double hypergeom_mass(std::int64_t from, std::int64_t to, std::int64_t pop, std::int64_t draws,
                             std::int64_t successes) {
  const double log_total = log_binomial(pop, draws);
  double mass = 0.0;
  for (std::int64_t i = from; i <= to; ++i)
    mass += std::exp(log_binomial(successes, i) + log_binomial(pop - successes, draws - i) - log_total);
  return std::clamp(mass, 0.0, 1.0);
}

}  // namespace detail

/// P(X <= k) for X ~ Hypergeometric(population, draws, successes), accumulated in log space.
inline double hypergeom_cdf(std::int64_t k, std::int64_t pop, std::int64_t draws, std::int64_t successes) {
  detail::check_hypergeom(pop, draws, successes);
  const std::int64_t lo = std::max<std::int64_t>(0, draws + successes - pop);
  const std::int64_t hi = std::min(draws, successes);
  if (k < lo) return 0.0;
  if (k >= hi) return 1.0;
  // Prefix sum of nonnegative terms keeps the CDF monotone in k.
  return detail::hypergeom_mass(lo, k, pop, draws, successes);
}

/// P(X > k), summed over the upper tail so that small tails keep their precision.
inline double hypergeom_sf(std::int64_t k, std::int64_t pop, std::int64_t draws, std::int64_t successes) {
  detail::check_hypergeom(pop, draws, successes);
  const std::int64_t lo = std::max<std::int64_t>(0, draws + successes - pop);
  const std::int64_t hi = std::min(draws, successes);
  if (k < lo) return 1.0;
  if (k >= hi) return 0.0;
  return detail::hypergeom_mass(k + 1, hi, pop, draws, successes);
}

/// Parameters of the finite-population coverage law.
struct CoverageLawParams {
  std::int64_t n_cal = 0;
  std::int64_t m_eval = 0;
  double alpha = 0.1;
  std::int64_t i_alpha = 0;

  /// i_alpha = ceil((n_cal + 1)(1 - alpha)): the descending rank of the calibration
  /// threshold, equal to n_cal + 1 - floor((n_cal + 1) alpha).
  static CoverageLawParams make(std::int64_t n_cal, std::int64_t m_eval, double alpha) {
    if (n_cal < 1 || m_eval < 1) throw DomainError("coverage law needs n_cal >= 1 and m_eval >= 1");
    detail::check_level(alpha);
    CoverageLawParams p;
    p.n_cal = n_cal;
    p.m_eval = m_eval;
    p.alpha = alpha;
    p.i_alpha = static_cast<std::int64_t>(std::ceil(static_cast<double>(n_cal + 1) * (1.0 - alpha) - 1e-9));
    p.i_alpha = std::clamp<std::int64_t>(p.i_alpha, 1, n_cal + 1);
    return p;
  }
};

/// P(Cov <= t) for the empirical coverage of m_eval points exchangeable with n_cal
/// calibration points: 1 - Phi_HG(i_alpha - 1; M + N, N, floor(M t) + i_alpha), evaluated as an upper tail.
inline double transductive_coverage_law(const CoverageLawParams& p, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("coverage level must lie in [0, 1]");
  if (p.n_cal < 1 || p.m_eval < 1 || p.i_alpha < 1 || p.i_alpha > p.n_cal + 1)
    throw DomainError("invalid coverage law parameters");
  if (t >= 1.0) return 1.0;
  const auto covered = static_cast<std::int64_t>(std::floor(static_cast<double>(p.m_eval) * t + 1e-9));
  const std::int64_t pop = p.m_eval + p.n_cal;
  const std::int64_t successes = std::min(covered + p.i_alpha, pop);
  return hypergeom_sf(p.i_alpha - 1, pop, p.n_cal, successes);
}

/// P(Cov(I_T) <= beta) for an evaluation mask of m_eval nodes under recalibrated
/// scores on a node-exchangeable sequence. Independent of the evaluation times.
inline double nodeex_coverage_law(std::int64_t n_cal, std::int64_t m_eval, double alpha, double beta) {
  return transductive_coverage_law(CoverageLawParams::make(n_cal, m_eval, alpha), beta);
}

/// (n + 1 - l, l) with l = floor((n + 1) alpha): the Beta law of the conditional
/// coverage with i.i.d. calibration scores.
inline std::pair<double, double> beta_coverage_params(std::int64_t n_cal, double alpha) {
  if (n_cal < 1) throw DomainError("n_cal must be positive");
  detail::check_level(alpha);
  const auto l = static_cast<std::int64_t>(std::floor(static_cast<double>(n_cal + 1) * alpha + 1e-9));
  if (l < 1) throw DegenerateLaw("calibration set too small for alpha: floor((n+1) alpha) = 0");
  return {static_cast<double>(n_cal + 1 - l), static_cast<double>(l)};
}

inline double beta_coverage_cdf(std::int64_t n_cal, double alpha, double t) {
  const auto [a, b] = beta_coverage_params(n_cal, alpha);
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  return boost::math::ibeta(a, b, t);
}

}  // namespace gcp
