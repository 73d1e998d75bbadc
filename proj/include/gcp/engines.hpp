#pragma once

// Calibration engines (naive, NodeEx, EdgeEx, NAPS, subgraph voting) and the
// sequence driver that runs them over an arrival schedule.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "gcp/cp_core.hpp"
#include "gcp/errors.hpp"
#include "gcp/eval.hpp"
#include "gcp/graph.hpp"
#include "gcp/model.hpp"
#include "gcp/rng.hpp"
#include "gcp/scores.hpp"

namespace gcp {

enum class EngineKind { naive, nodeex, edgeex, naps, subgraph_vote };

inline const char* to_string(EngineKind k) {
  switch (k) {
    case EngineKind::naive: return "naive";
    case EngineKind::nodeex: return "nodeex";
    case EngineKind::edgeex: return "edgeex";
    case EngineKind::naps: return "naps";
    case EngineKind::subgraph_vote: return "subgraph_vote";
  }
  return "?";
}

inline EngineKind engine_kind_from_string(const std::string& s) {
  for (auto k : {EngineKind::naive, EngineKind::nodeex, EngineKind::edgeex, EngineKind::naps, EngineKind::subgraph_vote})
    if (s == to_string(k)) return k;
  throw DomainError("unknown engine: " + s);
}

struct EngineConfig {
  EngineKind engine = EngineKind::nodeex;
  double alpha = 0.1;
  ScoreSpec score;
  int naps_k = 1;
  int vote_K = 10;
  double vote_subgraph_fraction = 0.5;
  bool vote_average_scores = false;
  std::uint64_t seed = 0;

  /// Record label: the engine name, with the hop count for NAPS.
  std::string label() const {
    if (engine == EngineKind::naps) return "naps_k" + std::to_string(naps_k);
    if (engine == EngineKind::subgraph_vote && vote_average_scores) return "subgraph_vote_avg";
    return to_string(engine);
  }

  void validate() const {
    detail::check_level(alpha);
    if (naps_k < 1) throw DomainError("naps_k must be >= 1");
    if (vote_K < 1) throw DomainError("vote_K must be >= 1");
    if (!(vote_subgraph_fraction > 0.0 && vote_subgraph_fraction <= 1.0))
      throw DomainError("vote_subgraph_fraction must lie in (0, 1]");
  }
};

struct CalibrationSet {
  std::vector<NodeId> members;
  std::vector<int> true_labels;
  std::optional<std::vector<double>> frozen_scores;

  static CalibrationSet from_nodes(const Graph& base, std::span<const NodeId> nodes) {
    if (nodes.empty()) throw DomainError("empty calibration set");
    CalibrationSet c;
    c.members.assign(nodes.begin(), nodes.end());
    for (NodeId v : nodes) {
      if (v >= base.num_nodes()) throw DomainError("calibration node out of range");
      c.true_labels.push_back(base.label(v));
    }
    return c;
  }

  std::size_t size() const noexcept { return members.size(); }

  bool contains(NodeId v) const { return std::find(members.begin(), members.end(), v) != members.end(); }
};

struct PredictionSet {
  std::vector<int> labels;
  double threshold = 0.0;
};

using PredictionMap = std::map<NodeId, PredictionSet>;
/// nullopt marks NotApplicable (no calibration node within reach).
using OptionalPredictionMap = std::map<NodeId, std::optional<PredictionSet>>;

// ---------------------------------------------------------------------------
// Score sources

/// Anything that yields class probabilities for the active nodes of a view.
class ProbabilitySource {
 public:
  virtual ~ProbabilitySource() = default;
  virtual ProbMatrix probabilities(const GraphView& view) const = 0;
};

class ModelProbabilities final : public ProbabilitySource {
 public:
  explicit ModelProbabilities(EquivariantClassifier model) : model_(std::move(model)) {}
  ProbMatrix probabilities(const GraphView& view) const override { return forward(model_, view); }
  const EquivariantClassifier& model() const noexcept { return model_; }

 private:
  EquivariantClassifier model_;
};

/// Score computation conditional on a view; APS noise keyed by (seed, stream).
struct Scorer {
  const ProbabilitySource* source = nullptr;
  ScoreSpec spec;
  std::uint64_t seed = 0;

  ScoreMatrix operator()(const GraphView& view, std::uint64_t stream) const {
    if (!source) throw DomainError("scorer without a probability source");
    return score_probabilities(source->probabilities(view), view, spec, seed, stream);
  }
  ScoreMatrix operator()(const GraphView& view) const { return (*this)(view, view.timestep()); }
};

// ---------------------------------------------------------------------------
// Shared helpers

inline double true_label_score(const GraphView& view, const ScoreMatrix& scores, NodeId v, int label) {
  return scores.values(static_cast<Eigen::Index>(view.row_of(v)), label);
}

inline std::vector<double> calibration_scores(const CalibrationSet& cal, const GraphView& view,
                                              const ScoreMatrix& scores) {
  std::vector<double> out;
  out.reserve(cal.size());
  for (std::size_t i = 0; i < cal.size(); ++i)
    out.push_back(true_label_score(view, scores, cal.members[i], cal.true_labels[i]));
  return out;
}

inline std::vector<WeightedSample> uniform_samples(std::span<const double> scores) {
  std::vector<WeightedSample> out;
  out.reserve(scores.size());
  for (double s : scores) out.push_back({s, 1.0});
  return out;
}

/// Calibration samples weighted by 1 / deg(v | G_t).
inline std::vector<WeightedSample> degree_weighted_samples(const CalibrationSet& cal, const GraphView& view,
                                                           const ScoreMatrix& scores) {
  std::vector<WeightedSample> out;
  out.reserve(cal.size());
  for (std::size_t i = 0; i < cal.size(); ++i) {
    const NodeId v = cal.members[i];
    const auto deg = degree_in_view(view, v);
    if (deg == 0)
      throw ScheduleCorruption("calibration node " + std::to_string(v) + " has degree 0 at timestep " +
                               std::to_string(view.timestep()));
    out.push_back({true_label_score(view, scores, v, cal.true_labels[i]), 1.0 / static_cast<double>(deg)});
  }
  return out;
}

inline void check_eval_nodes(const CalibrationSet& cal, const GraphView& view, std::span<const NodeId> eval_nodes) {
  for (NodeId v : eval_nodes) {
    if (!view.is_active(v)) throw InactiveNode(v);
    if (cal.contains(v)) throw DomainError("node " + std::to_string(v) + " is a calibration node");
  }
}

inline PredictionMap threshold_all(const GraphView& view, const ScoreMatrix& scores, std::span<const NodeId> nodes,
                                   double q) {
  PredictionMap out;
  for (NodeId v : nodes) out[v] = {prediction_set(scores.row(static_cast<Eigen::Index>(view.row_of(v))), q), q};
  return out;
}

// ---------------------------------------------------------------------------
// Naive CP: calibration scores frozen at t0, test scores from the current view.

struct NaiveCalibration {
  double threshold = 0.0;
  std::vector<double> frozen_scores;
  std::size_t timestep = 0;
};

inline NaiveCalibration naive_calibrate(CalibrationSet& cal, const GraphView& view_t0, const ScoreMatrix& scores_t0,
                                        const EngineConfig& config) {
  config.validate();
  NaiveCalibration n;
  n.frozen_scores = calibration_scores(cal, view_t0, scores_t0);
  n.threshold = conformal_threshold(uniform_samples(n.frozen_scores), config.alpha);
  n.timestep = view_t0.timestep();
  cal.frozen_scores = n.frozen_scores;
  return n;
}

inline NaiveCalibration naive_calibrate(CalibrationSet& cal, const GraphView& view_t0, const Scorer& scorer,
                                        const EngineConfig& config) {
  return naive_calibrate(cal, view_t0, scorer(view_t0), config);
}

inline PredictionMap naive_predict(const NaiveCalibration& frozen, const CalibrationSet& cal, const GraphView& view_t,
                                   const ScoreMatrix& scores_t, std::span<const NodeId> eval_nodes) {
  check_eval_nodes(cal, view_t, eval_nodes);
  return threshold_all(view_t, scores_t, eval_nodes, frozen.threshold);
}

// ---------------------------------------------------------------------------
// NodeEx / EdgeEx: recalibrate on scores recomputed for the current view.

inline double nodeex_threshold(const CalibrationSet& cal, const GraphView& view_t, const ScoreMatrix& scores_t,
                               double alpha) {
  return conformal_threshold(uniform_samples(calibration_scores(cal, view_t, scores_t)), alpha);
}

inline double edgeex_threshold(const CalibrationSet& cal, const GraphView& view_t, const ScoreMatrix& scores_t,
                               double alpha) {
  return conformal_threshold(degree_weighted_samples(cal, view_t, scores_t), alpha);
}

inline PredictionMap nodeex_predict(const CalibrationSet& cal, const GraphView& view_t, const ScoreMatrix& scores_t,
                                    const EngineConfig& config, std::span<const NodeId> eval_nodes) {
  config.validate();
  check_eval_nodes(cal, view_t, eval_nodes);
  return threshold_all(view_t, scores_t, eval_nodes, nodeex_threshold(cal, view_t, scores_t, config.alpha));
}

inline PredictionMap nodeex_predict(const CalibrationSet& cal, const GraphView& view_t, const Scorer& scorer,
                                    const EngineConfig& config, std::span<const NodeId> eval_nodes) {
  return nodeex_predict(cal, view_t, scorer(view_t), config, eval_nodes);
}

inline PredictionMap edgeex_predict(const CalibrationSet& cal, const GraphView& view_t, const ScoreMatrix& scores_t,
                                    const EngineConfig& config, std::span<const NodeId> eval_nodes) {
  config.validate();
  check_eval_nodes(cal, view_t, eval_nodes);
  return threshold_all(view_t, scores_t, eval_nodes, edgeex_threshold(cal, view_t, scores_t, config.alpha));
}

inline PredictionMap edgeex_predict(const CalibrationSet& cal, const GraphView& view_t, const Scorer& scorer,
                                    const EngineConfig& config, std::span<const NodeId> eval_nodes) {
  return edgeex_predict(cal, view_t, scorer(view_t), config, eval_nodes);
}

// ---------------------------------------------------------------------------
// NAPS: calibration restricted to the k-hop neighborhood of each test node.

/// For every active row, the calibration indices within k hops of it (calibration order).
inline std::vector<std::vector<std::size_t>> calibration_within_hops(const CalibrationSet& cal, const GraphView& view,
                                                                     int k) {
  std::vector<std::vector<std::size_t>> reach(view.num_active());
  for (std::size_t i = 0; i < cal.size(); ++i) {
    if (!view.is_active(cal.members[i])) continue;
    for (auto r : view.rows_within(view.row_of(cal.members[i]), k)) reach[r].push_back(i);
  }
  return reach;
}

inline OptionalPredictionMap naps_predict(const CalibrationSet& cal, const GraphView& view_t,
                                          const ScoreMatrix& scores_t, const EngineConfig& config,
                                          std::span<const NodeId> eval_nodes) {
  config.validate();
  check_eval_nodes(cal, view_t, eval_nodes);
  const auto reach = calibration_within_hops(cal, view_t, config.naps_k);
  const auto cal_scores = calibration_scores(cal, view_t, scores_t);
  OptionalPredictionMap out;
  for (NodeId v : eval_nodes) {
    const auto row = view_t.row_of(v);
    const auto& near = reach[row];
    if (near.empty()) {
      out[v] = std::nullopt;
      continue;
    }
    std::vector<WeightedSample> samples;
    samples.reserve(near.size());
    for (auto i : near) samples.push_back({cal_scores[i], 1.0});
    const double q = conformal_threshold(samples, config.alpha);
    out[v] = PredictionSet{prediction_set(scores_t.row(static_cast<Eigen::Index>(row)), q), q};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subgraph voting (transductive).

struct VoteOutcome {
  PredictionSet final_set;  // threshold is NaN unless the score-averaging variant is used
  std::vector<int> union_set;
  std::vector<int> intersection_set;
  std::vector<double> vote_fraction;  // per label
  std::vector<std::vector<int>> member_sets;
};

inline VoteOutcome subgraph_vote_predict(const CalibrationSet& cal, const GraphView& full_view, const Scorer& scorer,
                                         const EngineConfig& config, NodeId test_node) {
  config.validate();
  const NodeId single[] = {test_node};
  check_eval_nodes(cal, full_view, single);
  const Graph& base = full_view.base();
  const int k_classes = base.num_classes();
  const auto K = static_cast<std::size_t>(config.vote_K);
  Rng rng = make_rng(config.seed, {0x5a6eULL, test_node});

  std::vector<char> fixed(base.num_nodes(), 0);
  fixed[test_node] = 1;
  for (NodeId v : cal.members) fixed[v] = 1;
  std::vector<NodeId> others;
  for (NodeId v : full_view.active_nodes())
    if (!fixed[v]) others.push_back(v);
  const auto take = static_cast<std::size_t>(
      std::llround(config.vote_subgraph_fraction * static_cast<double>(others.size())));

  VoteOutcome out;
  std::vector<int> votes(static_cast<std::size_t>(k_classes), 0);
  std::vector<double> cal_acc(cal.size(), 0.0);
  std::vector<double> test_acc(static_cast<std::size_t>(k_classes), 0.0);
  for (std::size_t rep = 0; rep < K; ++rep) {
    std::shuffle(others.begin(), others.end(), rng);
    std::vector<NodeId> nodes(cal.members.begin(), cal.members.end());
    nodes.insert(nodes.end(), others.begin(), others.begin() + static_cast<std::ptrdiff_t>(take));
    nodes.push_back(test_node);
    const auto view = GraphView::induced(base, nodes, full_view.timestep());
    const auto scores = scorer(view, derive_seed(config.seed, {0x5b0eULL, test_node, rep}));
    const auto cs = calibration_scores(cal, view, scores);
    const auto test_row = scores.row(static_cast<Eigen::Index>(view.row_of(test_node)));
    const double q = conformal_threshold(uniform_samples(cs), config.alpha);
    auto set = prediction_set(test_row, q);
    for (int y : set) ++votes[static_cast<std::size_t>(y)];
    out.member_sets.push_back(std::move(set));
    for (std::size_t i = 0; i < cs.size(); ++i) cal_acc[i] += cs[i];
    for (int y = 0; y < k_classes; ++y) test_acc[static_cast<std::size_t>(y)] += test_row[static_cast<std::size_t>(y)];
  }

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int y = 0; y < k_classes; ++y) {
    const auto c = static_cast<std::size_t>(votes[static_cast<std::size_t>(y)]);
    const double p = static_cast<double>(c) / static_cast<double>(K);
    out.vote_fraction.push_back(p);
    if (c > 0) out.union_set.push_back(y);
    if (c == K) out.intersection_set.push_back(y);
    const double u = unif(rng);
    if (!config.vote_average_scores && u < p) out.final_set.labels.push_back(y);
  }
  if (config.vote_average_scores) {
    for (auto& s : cal_acc) s /= static_cast<double>(K);
    for (auto& s : test_acc) s /= static_cast<double>(K);
    const double q = conformal_threshold(uniform_samples(cal_acc), config.alpha);
    out.final_set = {prediction_set(test_acc, q), q};
  } else {
    out.final_set.threshold = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequence driver

struct TimestepAggregate {
  std::size_t t = 0;
  std::size_t nodes = 0;  // active test nodes with a prediction set
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double avg_size = std::numeric_limits<double>::quiet_NaN();
  double singleton_hit = std::numeric_limits<double>::quiet_NaN();
  double emd_cal = std::numeric_limits<double>::quiet_NaN();
  double emd_test = std::numeric_limits<double>::quiet_NaN();
};

struct SequenceOptions {
  /// Emit a per-timestep aggregate over all active test nodes every this many steps (0 = never).
  std::size_t aggregate_every = 0;
  /// Fill a coverage matrix over all active test nodes at aggregate timesteps.
  bool keep_coverage_matrix = false;
};

struct EngineRun {
  EngineConfig config;
  std::vector<PredictionSetRecord> records;
  std::size_t evaluated = 0;       // nodes due under the mask
  std::size_t not_applicable = 0;  // NAPS nodes without a prediction set
  std::vector<TimestepAggregate> aggregates;
  std::optional<CoverageMatrix> coverage;

  double inapplicable_fraction() const {
    return evaluated == 0 ? 0.0 : static_cast<double>(not_applicable) / static_cast<double>(evaluated);
  }
};

namespace detail {

/// Sets for `nodes` under one threshold-type engine; nullopt entries are NotApplicable.
inline OptionalPredictionMap engine_sets(const EngineConfig& cfg, const NaiveCalibration* naive,
                                         const CalibrationSet& cal, const GraphView& view, const ScoreMatrix& scores,
                                         std::span<const NodeId> nodes) {
  OptionalPredictionMap out;
  PredictionMap sets;
  switch (cfg.engine) {
    case EngineKind::naive: sets = naive_predict(*naive, cal, view, scores, nodes); break;
    case EngineKind::nodeex: sets = nodeex_predict(cal, view, scores, cfg, nodes); break;
    case EngineKind::edgeex: sets = edgeex_predict(cal, view, scores, cfg, nodes); break;
    case EngineKind::naps: return naps_predict(cal, view, scores, cfg, nodes);
    case EngineKind::subgraph_vote: throw DomainError("subgraph voting is not a per-timestep engine");
  }
  for (auto& [v, s] : sets) out[v] = std::move(s);
  return out;
}

}  // namespace detail

/// Runs every configured engine over one schedule, sharing score computations.
/// The evaluation mask is built from the schedule before any set is computed.
/// Subgraph voting is transductive: it predicts every masked node on the final graph.
inline std::vector<EngineRun> evaluate_sequence(const Graph& base, const ArrivalSchedule& schedule,
                                                const Scorer& scorer, std::span<const EngineConfig> engines,
                                                const EvaluationPolicy& policy, const SequenceOptions& options = {}) {
  if (engines.empty()) throw DomainError("no engines configured");
  for (const auto& e : engines) e.validate();
  const std::size_t end = schedule.length();
  if (schedule.t0_cal > end || schedule.calibration_nodes.empty()) throw ScheduleCorruption("invalid calibration prefix");

  CalibrationSet cal = CalibrationSet::from_nodes(base, schedule.calibration_nodes);
  const auto arrivals = test_arrivals(schedule, base);
  std::map<NodeId, std::size_t> arrival_of(arrivals.begin(), arrivals.end());
  const EvaluationMask mask = build_mask(schedule, base, policy);
  const auto due = mask.by_timestep(end);

  std::vector<EngineRun> runs;
  for (const auto& e : engines) {
    EngineRun run;
    run.config = e;
    if (options.keep_coverage_matrix && e.engine != EngineKind::subgraph_vote && !arrivals.empty()) {
      std::vector<NodeId> nodes;
      std::vector<std::size_t> arr;
      for (auto [v, a] : arrivals) {
        nodes.push_back(v);
        arr.push_back(a);
      }
      run.coverage.emplace(std::move(nodes), std::move(arr), schedule.t0_cal + 1 > end ? end : schedule.t0_cal + 1,
                           end);
    }
    runs.push_back(std::move(run));
  }

  const auto view0 = view_at(schedule, base, schedule.t0_cal);
  const auto scores0 = scorer(view0, schedule.t0_cal);
  const NaiveCalibration naive = naive_calibrate(cal, view0, scores0, engines.front());
  std::map<double, NaiveCalibration> naive_by_alpha;
  for (const auto& e : engines)
    if (e.engine == EngineKind::naive && !naive_by_alpha.count(e.alpha)) {
      CalibrationSet copy = cal;
      naive_by_alpha.emplace(e.alpha, naive_calibrate(copy, view0, scores0, e));
    }

  const bool per_step_engines = std::any_of(engines.begin(), engines.end(), [](const EngineConfig& e) {
    return e.engine != EngineKind::subgraph_vote;
  });

  for (std::size_t t = schedule.t0_cal + 1; t <= end && per_step_engines; ++t) {
    const bool aggregate = options.aggregate_every > 0 && (t - schedule.t0_cal) % options.aggregate_every == 0;
    if (due[t].empty() && !aggregate) continue;
    const auto view = view_at(schedule, base, t);
    const auto scores = scorer(view, t);

    std::vector<NodeId> active_tests;
    double emd_cal = std::numeric_limits<double>::quiet_NaN(), emd_test = emd_cal;
    if (aggregate) {
      for (auto [v, a] : arrivals)
        if (a <= t) active_tests.push_back(v);
      emd_cal = emd_1d(naive.frozen_scores, calibration_scores(cal, view, scores));
      if (!active_tests.empty()) {
        std::vector<double> ts;
        for (NodeId v : active_tests) ts.push_back(true_label_score(view, scores, v, base.label(v)));
        emd_test = emd_1d(naive.frozen_scores, ts);
      }
    }

    for (auto& run : runs) {
      const auto& cfg = run.config;
      if (cfg.engine == EngineKind::subgraph_vote) continue;
      const NaiveCalibration* nc = cfg.engine == EngineKind::naive ? &naive_by_alpha.at(cfg.alpha) : nullptr;

      if (!due[t].empty()) {
        const auto sets = detail::engine_sets(cfg, nc, cal, view, scores, due[t]);
        for (NodeId v : due[t]) {
          ++run.evaluated;
          const auto& s = sets.at(v);
          if (!s) {
            ++run.not_applicable;
            continue;
          }
          run.records.push_back(PredictionSetRecord::make(v, arrival_of.at(v), t, s->labels, base.label(v),
                                                          s->threshold, cfg.label(), cfg.seed));
        }
      }

      if (aggregate) {
        TimestepAggregate agg;
        agg.t = t;
        agg.emd_cal = emd_cal;
        agg.emd_test = emd_test;
        if (!active_tests.empty()) {
          const auto sets = detail::engine_sets(cfg, nc, cal, view, scores, active_tests);
          std::size_t n = 0, hit = 0, single = 0, size = 0;
          for (NodeId v : active_tests) {
            const auto& s = sets.at(v);
            if (!s) continue;
            const bool covered = std::find(s->labels.begin(), s->labels.end(), base.label(v)) != s->labels.end();
            ++n;
            hit += covered;
            size += s->labels.size();
            single += covered && s->labels.size() == 1;
            if (run.coverage) run.coverage->set(v, t, covered);
          }
          agg.nodes = n;
          if (n > 0) {
            agg.coverage = static_cast<double>(hit) / static_cast<double>(n);
            agg.avg_size = static_cast<double>(size) / static_cast<double>(n);
            agg.singleton_hit = static_cast<double>(single) / static_cast<double>(n);
          }
        }
        run.aggregates.push_back(agg);
      }
    }
  }

  // Transductive voting on the final graph for every masked node.
  const bool any_vote = std::any_of(engines.begin(), engines.end(), [](const EngineConfig& e) {
    return e.engine == EngineKind::subgraph_vote;
  });
  if (any_vote) {
    const auto full = view_at(schedule, base, end);
    for (auto& run : runs) {
      if (run.config.engine != EngineKind::subgraph_vote) continue;
      for (auto [v, t_eval] : mask.assignments()) {
        (void)t_eval;
        ++run.evaluated;
        auto outcome = subgraph_vote_predict(cal, full, scorer, run.config, v);
        run.records.push_back(PredictionSetRecord::make(v, arrival_of.at(v), end, outcome.final_set.labels,
                                                        base.label(v), outcome.final_set.threshold, run.config.label(),
                                                        run.config.seed));
      }
    }
  }
  return runs;
}

inline EngineRun evaluate_sequence(const Graph& base, const ArrivalSchedule& schedule, const Scorer& scorer,
                                   const EngineConfig& engine, const EvaluationPolicy& policy,
                                   const SequenceOptions& options = {}) {
  return std::move(evaluate_sequence(base, schedule, scorer, std::span<const EngineConfig>(&engine, 1), policy,
                                     options)
                       .front());
}

}  // namespace gcp
