#pragma once

// Coverage bookkeeping and empirical metrics.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gcp/errors.hpp"
#include "gcp/graph.hpp"
#include "gcp/rng.hpp"

namespace gcp {

/// One prediction set emitted for one node at one timestep.
struct PredictionSetRecord {
  NodeId node = 0;
  std::size_t arrival_t = 0;
  std::size_t eval_t = 0;
  std::vector<int> labels;
  int true_label = 0;
  bool covered = false;
  std::size_t set_size = 0;
  double q_used = 0.0;
  std::string engine;
  std::uint64_t seed = 0;

  static PredictionSetRecord make(NodeId node, std::size_t arrival_t, std::size_t eval_t, std::vector<int> labels,
                                  int true_label, double q_used, std::string engine, std::uint64_t seed) {
    PredictionSetRecord r;
    r.node = node;
    r.arrival_t = arrival_t;
    r.eval_t = eval_t;
    r.covered = std::find(labels.begin(), labels.end(), true_label) != labels.end();
    r.set_size = labels.size();
    r.labels = std::move(labels);
    r.true_label = true_label;
    r.q_used = q_used;
    r.engine = std::move(engine);
    r.seed = seed;
    return r;
  }
};

// ---------------------------------------------------------------------------
// Coverage matrix and evaluation masks

enum class Cell : std::int8_t { not_present = -1, miscovered = 0, covered = 1 };

/// Node x timestep coverage outcomes for the test nodes of one sequence.
/// Rows are test nodes in arrival order; columns are timesteps [first_t, last_t].
class CoverageMatrix {
 public:
  CoverageMatrix() = default;
  CoverageMatrix(std::vector<NodeId> nodes, std::vector<std::size_t> arrival, std::size_t first_t, std::size_t last_t)
      : nodes_(std::move(nodes)), arrival_(std::move(arrival)), first_t_(first_t), last_t_(last_t) {
    if (nodes_.size() != arrival_.size()) throw DimensionMismatch("one arrival time per node");
    if (last_t_ < first_t_) throw DomainError("empty timestep range");
    cells_.assign(nodes_.size() * width(), Cell::not_present);
    for (std::size_t i = 0; i < nodes_.size(); ++i) row_of_[nodes_[i]] = i;
  }

  std::size_t num_nodes() const noexcept { return nodes_.size(); }
  std::size_t first_timestep() const noexcept { return first_t_; }
  std::size_t last_timestep() const noexcept { return last_t_; }
  std::span<const NodeId> nodes() const noexcept { return nodes_; }
  std::size_t arrival_index(NodeId v) const { return arrival_.at(row(v)); }

  void set(NodeId v, std::size_t t, bool covered) {
    const auto i = row(v);
    if (t < arrival_[i]) throw DomainError("node " + std::to_string(v) + " is not present at timestep " + std::to_string(t));
    cells_[index(i, t)] = covered ? Cell::covered : Cell::miscovered;
  }

  Cell at(NodeId v, std::size_t t) const { return cells_[index(row(v), t)]; }

  /// Coverage over present, recorded entries of column t; nullopt if none.
  std::optional<double> column_coverage(std::size_t t) const {
    std::size_t n = 0, hit = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto c = cells_[index(i, t)];
      if (c == Cell::not_present) continue;
      ++n;
      hit += c == Cell::covered;
    }
    if (n == 0) return std::nullopt;
    return static_cast<double>(hit) / static_cast<double>(n);
  }

 private:
  std::size_t width() const { return last_t_ - first_t_ + 1; }
  std::size_t row(NodeId v) const {
    auto it = row_of_.find(v);
    if (it == row_of_.end()) throw DomainError("node " + std::to_string(v) + " is not a test node");
    return it->second;
  }
  std::size_t index(std::size_t i, std::size_t t) const {
    if (t < first_t_ || t > last_t_) throw DomainError("timestep outside the coverage matrix");
    return i * width() + (t - first_t_);
  }

  std::vector<NodeId> nodes_;
  std::vector<std::size_t> arrival_;
  std::size_t first_t_ = 0;
  std::size_t last_t_ = 0;
  std::vector<Cell> cells_;
  std::map<NodeId, std::size_t> row_of_;
};

/// Assignment of test nodes to evaluation timesteps; each node at most once,
/// never before its arrival.
class EvaluationMask {
 public:
  void assign(NodeId v, std::size_t t, std::size_t arrival) {
    if (t < arrival) throw DomainError("evaluation before arrival for node " + std::to_string(v));
    if (!assignments_.emplace(v, t).second) throw DomainError("node " + std::to_string(v) + " evaluated twice");
  }
  const std::map<NodeId, std::size_t>& assignments() const noexcept { return assignments_; }
  std::size_t size() const noexcept { return assignments_.size(); }

  /// Nodes due at each timestep in [0, horizon].
  std::vector<std::vector<NodeId>> by_timestep(std::size_t horizon) const {
    std::vector<std::vector<NodeId>> due(horizon + 1);
    for (auto [v, t] : assignments_)
      if (t <= horizon) due[t].push_back(v);
    return due;
  }

 private:
  std::map<NodeId, std::size_t> assignments_;
};

struct EvaluationPolicy {
  enum class Kind { upon_arrival, fixed_time, random_time };
  Kind kind = Kind::upon_arrival;
  std::size_t fixed_t = 0;  // 0 selects the end of the schedule
  std::uint64_t seed = 0;

  static EvaluationPolicy upon_arrival() { return {}; }
  static EvaluationPolicy fixed_time(std::size_t t) { return {Kind::fixed_time, t, 0}; }
  static EvaluationPolicy random_time(std::uint64_t seed) { return {Kind::random_time, 0, seed}; }
};

inline const char* to_string(EvaluationPolicy::Kind k) {
  switch (k) {
    case EvaluationPolicy::Kind::upon_arrival: return "upon_arrival";
    case EvaluationPolicy::Kind::fixed_time: return "fixed_time";
    case EvaluationPolicy::Kind::random_time: return "random_time";
  }
  return "?";
}

/// Test nodes of a schedule (activated after the calibration prefix, outside G_0
/// and the calibration set) with their activation timesteps, in arrival order.
inline std::vector<std::pair<NodeId, std::size_t>> test_arrivals(const ArrivalSchedule& schedule, const Graph& base) {
  std::vector<char> excluded(base.num_nodes(), 0);
  for (NodeId v : schedule.prefix_nodes) excluded[v] = 1;
  for (NodeId v : schedule.calibration_nodes) excluded[v] = 1;
  const auto act = activation_times(schedule, base);
  std::vector<std::pair<NodeId, std::size_t>> out;
  for (NodeId v = 0; v < base.num_nodes(); ++v)
    if (!excluded[v] && act[v] && *act[v] > schedule.t0_cal) out.emplace_back(v, *act[v]);
  std::stable_sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.second < b.second; });
  return out;
}

/// Builds the evaluation mask from the schedule alone, before any prediction exists.
inline EvaluationMask build_mask(const ArrivalSchedule& schedule, const Graph& base, const EvaluationPolicy& policy) {
  EvaluationMask mask;
  const std::size_t end = schedule.length();
  const std::size_t fixed = policy.fixed_t == 0 ? end : policy.fixed_t;
  if (policy.kind == EvaluationPolicy::Kind::fixed_time && (fixed <= schedule.t0_cal || fixed > end))
    throw DomainError("fixed evaluation time outside (t0_cal, end]");
  Rng rng = make_rng(policy.seed, {0x7e57ULL});
  for (auto [v, arrival] : test_arrivals(schedule, base)) {
    switch (policy.kind) {
      case EvaluationPolicy::Kind::upon_arrival:
        mask.assign(v, arrival, arrival);
        break;
      case EvaluationPolicy::Kind::fixed_time:
        if (arrival <= fixed) mask.assign(v, fixed, arrival);
        break;
      case EvaluationPolicy::Kind::random_time: {
        std::uniform_int_distribution<std::size_t> pick(arrival, end);
        mask.assign(v, pick(rng), arrival);
        break;
      }
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// Metrics

namespace detail {
inline void require_records(std::span<const PredictionSetRecord> records) {
  if (records.empty()) throw DomainError("metric over an empty evaluation mask");
}
}  // namespace detail

inline double empirical_coverage(std::span<const PredictionSetRecord> records) {
  detail::require_records(records);
  std::size_t hit = 0;
  for (const auto& r : records) hit += r.covered;
  return static_cast<double>(hit) / static_cast<double>(records.size());
}

/// |coverage - (1 - alpha)| as a fraction.
inline double deviation_from_target(std::span<const PredictionSetRecord> records, double alpha) {
  return std::abs(empirical_coverage(records) - (1.0 - alpha));
}

inline double deviation_percent(std::span<const PredictionSetRecord> records, double alpha) {
  return 100.0 * deviation_from_target(records, alpha);
}

/// Mean of the per-sequence deviations.
inline double aggregate_deviation(std::span<const std::vector<PredictionSetRecord>> sequences, double alpha) {
  if (sequences.empty()) throw DomainError("no sequences to aggregate");
  double acc = 0.0;
  for (const auto& s : sequences) acc += deviation_from_target(s, alpha);
  return acc / static_cast<double>(sequences.size());
}

inline double avg_set_size(std::span<const PredictionSetRecord> records) {
  detail::require_records(records);
  double acc = 0.0;
  for (const auto& r : records) acc += static_cast<double>(r.set_size);
  return acc / static_cast<double>(records.size());
}

/// Fraction of records that are singletons covering the true label.
inline double singleton_hit_ratio(std::span<const PredictionSetRecord> records) {
  detail::require_records(records);
  std::size_t hit = 0;
  for (const auto& r : records) hit += r.set_size == 1 && r.covered;
  return static_cast<double>(hit) / static_cast<double>(records.size());
}

/// Wasserstein-1 distance between two empirical distributions: the integral of
/// |F_a - F_b| over the merged support.
inline double emd_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("EMD of an empty sample");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double prev = std::min(sa.front(), sb.front());
  double dist = 0.0;
  while (i < sa.size() || j < sb.size()) {
    const double next = (j >= sb.size() || (i < sa.size() && sa[i] <= sb[j])) ? sa[i] : sb[j];
    dist += std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb) * (next - prev);
    while (i < sa.size() && sa[i] == next) ++i;
    while (j < sb.size() && sb[j] == next) ++j;
    prev = next;
  }
  return dist;
}

/// sup over beta in {0, 0.01, ..., 1} of |F_emp(beta) - law(beta)|.
inline double coverage_cdf_compare(std::span<const double> per_trial_coverages,
                                   const std::function<double(double)>& law, std::size_t min_trials = 100) {
  if (per_trial_coverages.size() < min_trials)
    throw DomainError("coverage CDF comparison needs at least " + std::to_string(min_trials) + " trials");
  std::vector<double> sorted(per_trial_coverages.begin(), per_trial_coverages.end());
  std::sort(sorted.begin(), sorted.end());
  double sup = 0.0;
  for (int step = 0; step <= 100; ++step) {
    const double beta = step / 100.0;
    const auto below = std::upper_bound(sorted.begin(), sorted.end(), beta + 1e-12) - sorted.begin();
    const double emp = static_cast<double>(below) / static_cast<double>(sorted.size());
    sup = std::max(sup, std::abs(emp - law(beta)));
  }
  return sup;
}

/// Average ranks (1-based), ties sharing their mean rank.
inline std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double spearman_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("spearman needs two equal-length series");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// Trailing moving average over `window` points (shorter at the start).
inline std::vector<double> moving_average(std::span<const double> series, std::size_t window) {
  if (window == 0) throw DomainError("window must be positive");
  std::vector<double> out(series.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    acc += series[i];
    if (i >= window) acc -= series[i - window];
    out[i] = acc / static_cast<double>(std::min(i + 1, window));
  }
  return out;
}

}  // namespace gcp
