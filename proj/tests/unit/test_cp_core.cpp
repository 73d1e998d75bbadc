#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "gcp/cp_core.hpp"
#include "oracles.hpp"

using namespace gcp;

namespace {

std::vector<WeightedSample> make_samples(const std::vector<double>& s, const std::vector<double>& w) {
  std::vector<WeightedSample> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back({s[i], w[i]});
  return out;
}

std::vector<WeightedSample> uniform(const std::vector<double>& s) {
  return make_samples(s, std::vector<double>(s.size(), 1.0));
}

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

TEST(WeightedQuantile, MiddleOfThree) { EXPECT_EQ(weighted_quantile(uniform({1, 2, 3}), 0.5), 2.0); }

TEST(WeightedQuantile, FirstElementQualifies) {
  EXPECT_EQ(weighted_quantile(uniform({0.1, 0.2, 0.3, 0.4}), 0.1), 0.1);
}

TEST(WeightedQuantile, UnsortedInputIsSortedFirst) { EXPECT_EQ(weighted_quantile(uniform({3, 1, 2}), 0.5), 2.0); }

TEST(WeightedQuantile, MatchesBruteForceScan) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> size(1, 12);
  std::uniform_real_distribution<double> weight(0.0, 2.0), level(0.05, 0.95);
  std::uniform_int_distribution<int> coarse(0, 5);  // coarse scores force ties
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = size(rng);
    std::vector<double> s(n), w(n);
    for (int i = 0; i < n; ++i) {
      s[i] = trial % 2 ? coarse(rng) * 0.5 : weight(rng);
      w[i] = weight(rng);
    }
    w[0] += 1e-3;
    const double alpha = level(rng);
    const auto expected = oracle::quantile_scan(s, w, alpha);
    if (expected) {
      EXPECT_EQ(weighted_quantile(make_samples(s, w), alpha), *expected) << "trial " << trial;
      ++checked;
    } else {
      EXPECT_THROW(weighted_quantile(make_samples(s, w), alpha), InsufficientCalibrationMass) << "trial " << trial;
    }
  }
  EXPECT_GT(checked, 500);
}

TEST(WeightedQuantile, EqualWeightsGiveUnweightedOrderStatistic) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + trial % 30;
    std::vector<double> s(n);
    for (auto& x : s) x = u(rng);
    const double alpha = 0.02 + 0.9 * u(rng);
    const auto rank = static_cast<long>(std::ceil((n + 1) * alpha - 1e-12));  // 1-based
    auto sorted = s;
    std::sort(sorted.begin(), sorted.end());
    if (rank > n) {
      EXPECT_THROW(weighted_quantile(uniform(s), alpha), InsufficientCalibrationMass);
    } else {
      EXPECT_EQ(weighted_quantile(uniform(s), alpha), sorted[static_cast<std::size_t>(rank - 1)]);
    }
  }
}

TEST(WeightedQuantile, ScalingWeightsWithGeneralizedDenominatorIsInvariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    auto samples = uniform({0.3, 0.1, 0.7, 0.2, 0.9});
    for (auto& s : samples) s.weight = u(rng);
    const double c = u(rng) * 5;
    auto scaled = samples;
    for (auto& s : scaled) s.weight *= c;
    const auto a = detail::cumulative_fractions(detail::sorted_by_score(samples), 1.0);
    const auto b = detail::cumulative_fractions(detail::sorted_by_score(scaled), c);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(WeightedQuantile, InsufficientMassIsSignalled) {
  // Two samples reach at most 2/3.
  EXPECT_THROW(weighted_quantile(uniform({1, 2}), 0.7), InsufficientCalibrationMass);
}

TEST(WeightedQuantile, RejectsInvalidInput) {
  EXPECT_THROW(weighted_quantile({}, 0.5), DomainError);
  EXPECT_THROW(weighted_quantile(make_samples({1.0}, {-1.0}), 0.5), DomainError);
  EXPECT_THROW(weighted_quantile(make_samples({1.0}, {0.0}), 0.5), DomainError);
  EXPECT_THROW(weighted_quantile(uniform({std::nan("")}), 0.5), DomainError);
  EXPECT_THROW(weighted_quantile(uniform({1.0}), 0.0), DomainError);
  EXPECT_THROW(weighted_quantile(uniform({1.0}), 1.0), DomainError);
}

TEST(AugmentedQuantile, NeverRunsOutOfMass) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + trial % 10;
    std::vector<double> s(n);
    for (auto& x : s) x = u(rng);
    const double alpha = 0.01 + 0.98 * u(rng);
    const double q = augmented_weighted_quantile(uniform(s), alpha);
    const bool reachable = static_cast<double>(n) / (n + 1) >= alpha;
    if (reachable) {
      EXPECT_TRUE(std::isfinite(q));
      EXPECT_EQ(q, weighted_quantile(uniform(s), alpha));
    } else {
      EXPECT_EQ(q, kInf);
    }
  }
}

TEST(ConformalThreshold, UniformWeightsPickFloorIndex) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n : {5, 9, 19, 40, 80, 99, 100}) {
    std::vector<double> s(n);
    for (auto& x : s) x = u(rng);
    auto sorted = s;
    std::sort(sorted.begin(), sorted.end());
    const auto l = static_cast<int>(std::floor((n + 1) * 0.1 + 1e-9));
    const double q = conformal_threshold(uniform(s), 0.1);
    if (l == 0)
      EXPECT_EQ(q, -kInf);
    else
      EXPECT_EQ(q, sorted[static_cast<std::size_t>(l - 1)]) << "n=" << n;
  }
}

TEST(ConformalThreshold, NinePointsAlphaTenPercentIsMinimum) {
  EXPECT_EQ(conformal_threshold(uniform({5, 3, 9, 4, 8, 6, 7, 2, 1}), 0.1), 1.0);
}

TEST(PredictionSet, Examples) {
  EXPECT_EQ(prediction_set(std::vector<double>{0.9, 0.05, 0.05}, 0.1), (std::vector<int>{0}));
  EXPECT_EQ(prediction_set(std::vector<double>{0.3, 0.3}, 0.3), (std::vector<int>{0, 1}));
  EXPECT_EQ(prediction_set(std::vector<double>{-5, 2, 0.1}, -kInf), (std::vector<int>{0, 1, 2}));
  EXPECT_TRUE(prediction_set(std::vector<double>{0.1, 0.2}, 0.5).empty());
  EXPECT_THROW(prediction_set(std::vector<double>{0.1}, std::nan("")), DomainError);
}

TEST(PredictionSet, SizeNonincreasingInThreshold) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(7);
    for (auto& x : s) x = u(rng);
    std::size_t prev = 8;
    for (double q = -0.1; q <= 1.1; q += 0.01) {
      const auto size = prediction_set(s, q).size();
      EXPECT_LE(size, prev);
      prev = size;
    }
  }
}

TEST(Hypergeometric, SupportBoundaries) {
  EXPECT_EQ(hypergeom_cdf(5, 20, 5, 8), 1.0);
  EXPECT_EQ(hypergeom_cdf(100, 20, 5, 8), 1.0);
  // lo = 5 + 18 - 20 = 3
  EXPECT_EQ(hypergeom_cdf(2, 20, 5, 18), 0.0);
  EXPECT_GT(hypergeom_cdf(3, 20, 5, 18), 0.0);
}

TEST(Hypergeometric, MatchesExactEnumerationUpToPopulationTwenty) {
  for (std::int64_t pop = 0; pop <= 20; ++pop)
    for (std::int64_t draws = 0; draws <= pop; ++draws)
      for (std::int64_t succ = 0; succ <= pop; ++succ)
        for (std::int64_t k = -1; k <= std::min(draws, succ) + 1; ++k)
          ASSERT_NEAR(hypergeom_cdf(k, pop, draws, succ), oracle::hypergeom_cdf_exact(k, pop, draws, succ), 1e-12)
              << pop << " " << draws << " " << succ << " " << k;
}

TEST(Hypergeometric, PmfIsNonnegativeAtLargePopulations) {
  for (std::int64_t k = 0; k <= 300; ++k)
    EXPECT_GE(hypergeom_cdf(k, 3000, 300, 1200), hypergeom_cdf(k - 1, 3000, 300, 1200));
}

TEST(Hypergeometric, DomainErrors) {
  EXPECT_THROW(hypergeom_cdf(0, -1, 0, 0), DomainError);
  EXPECT_THROW(hypergeom_cdf(0, 5, 6, 0), DomainError);
  EXPECT_THROW(hypergeom_cdf(0, 5, 2, 6), DomainError);
  EXPECT_THROW(hypergeom_cdf(0, 5, -1, 2), DomainError);
}

TEST(CoverageLaw, ParamsIndex) {
  const auto p = CoverageLawParams::make(9, 10, 0.1);
  EXPECT_EQ(p.i_alpha, 9);
  EXPECT_EQ(CoverageLawParams::make(99, 10, 0.1).i_alpha, 90);
  EXPECT_EQ(CoverageLawParams::make(40, 10, 0.1).i_alpha, 37);
  EXPECT_THROW(CoverageLawParams::make(0, 10, 0.1), DomainError);
}

TEST(CoverageLaw, TotalProbabilityAndMonotone) {
  const auto p = CoverageLawParams::make(20, 50, 0.1);
  EXPECT_EQ(transductive_coverage_law(p, 1.0), 1.0);
  EXPECT_EQ(nodeex_coverage_law(20, 50, 0.1, 1.0), 1.0);
  double prev = 0.0;
  for (int i = 0; i <= 20; ++i) {
    const double v = transductive_coverage_law(p, i * 0.05);
    EXPECT_GE(v, prev - 1e-15);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    prev = v;
  }
  prev = 0.0;
  for (int i = 0; i <= 100; ++i) {
    const double v = nodeex_coverage_law(40, 200, 0.1, i / 100.0);
    EXPECT_GE(v, prev - 1e-15);
    prev = v;
  }
  EXPECT_THROW(transductive_coverage_law(p, 1.5), DomainError);
}

/// Exchangeable continuous scores: calibration threshold from n points, coverage of m more.
TEST(CoverageLaw, MatchesMonteCarloTransductiveCoverage) {
  const int n = 20, m = 50, trials = 20000;
  const double alpha = 0.1;
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> covered_count(trials);
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<WeightedSample> cal(n);
    for (auto& c : cal) c = {u(rng), 1.0};
    const double q = conformal_threshold(cal, alpha);
    int hit = 0;
    for (int j = 0; j < m; ++j) hit += u(rng) >= q;
    covered_count[trial] = hit;
  }
  const auto p = CoverageLawParams::make(n, m, alpha);
  double sup = 0.0;
  for (int c = 0; c <= m; ++c) {
    const double t = static_cast<double>(c) / m;
    const double emp =
        static_cast<double>(std::count_if(covered_count.begin(), covered_count.end(), [&](int h) { return h <= c; })) /
        trials;
    sup = std::max(sup, std::abs(emp - transductive_coverage_law(p, t)));
  }
  EXPECT_LE(sup, 0.03);
}

TEST(BetaLaw, Params) {
  EXPECT_EQ(beta_coverage_params(9, 0.1), std::make_pair(9.0, 1.0));
  EXPECT_EQ(beta_coverage_params(99, 0.1), std::make_pair(90.0, 10.0));
  EXPECT_THROW(beta_coverage_params(5, 0.1), DegenerateLaw);
  EXPECT_THROW(beta_coverage_params(0, 0.1), DomainError);
}

TEST(BetaLaw, MeanMatchesMonteCarlo) {
  const int n = 99, trials = 20000;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double acc = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    std::vector<WeightedSample> cal(n);
    for (auto& c : cal) c = {u(rng), 1.0};
    // Scores uniform on [0,1]: conditional coverage is exactly 1 - q.
    acc += 1.0 - conformal_threshold(cal, 0.1);
  }
  const auto [a, b] = beta_coverage_params(n, 0.1);
  EXPECT_NEAR(acc / trials, a / (a + b), 0.005);
}

TEST(BetaLaw, CdfBoundaries) {
  EXPECT_EQ(beta_coverage_cdf(99, 0.1, 0.0), 0.0);
  EXPECT_EQ(beta_coverage_cdf(99, 0.1, 1.0), 1.0);
  // Beta(9, 1): CDF t^9.
  EXPECT_NEAR(beta_coverage_cdf(9, 0.1, 0.8), std::pow(0.8, 9), 1e-12);
}
