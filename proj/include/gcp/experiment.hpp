#pragma once

// Experiment configuration and multi-seed orchestration.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "gcp/engines.hpp"
#include "gcp/eval.hpp"
#include "gcp/graph.hpp"
#include "gcp/io.hpp"
#include "gcp/model.hpp"

namespace gcp {

using json = nlohmann::json;

struct ExperimentConfig {
  // Data source: "sbm" (synthetic) or "files".
  std::string source = "sbm";
  SbmSpec sbm;
  std::uint64_t graph_seed = 0;
  GraphFiles files;
  std::string external_scores_dir;  // bypasses the model when set

  SequenceKind sequence = SequenceKind::node_inductive;
  SplitSpec split{20, 20, 80};
  std::vector<EngineConfig> engines{EngineConfig{}};
  ScoreSpec score;
  double alpha = 0.1;
  std::vector<std::uint64_t> seeds{0};
  EvaluationPolicy policy;
  TrainingOptions training;
  std::size_t aggregate_every = 1;
  std::string output_dir = "out";

  void validate() const {
    detail::check_level(alpha);
    if (seeds.empty()) throw DomainError("seeds must be nonempty");
    if (split.calibration < 1) throw DomainError("calibration size must be >= 1");
    if (engines.empty()) throw DomainError("engines must be nonempty");
    if (source != "sbm" && source != "files") throw DomainError("unknown data source: " + source);
  }
};

inline void to_json(json& j, const EngineConfig& e) {
  j = json{{"engine", to_string(e.engine)},
           {"naps_k", e.naps_k},
           {"vote_K", e.vote_K},
           {"vote_subgraph_fraction", e.vote_subgraph_fraction},
           {"vote_average_scores", e.vote_average_scores}};
}

inline void from_json(const json& j, EngineConfig& e) {
  if (j.is_string()) {
    e.engine = engine_kind_from_string(j.get<std::string>());
    return;
  }
  e.engine = engine_kind_from_string(j.at("engine").get<std::string>());
  e.naps_k = j.value("naps_k", e.naps_k);
  e.vote_K = j.value("vote_K", e.vote_K);
  e.vote_subgraph_fraction = j.value("vote_subgraph_fraction", e.vote_subgraph_fraction);
  e.vote_average_scores = j.value("vote_average_scores", e.vote_average_scores);
}

inline void to_json(json& j, const ExperimentConfig& c) {
  j = json{
      {"data",
       {{"source", c.source},
        {"graph_seed", c.graph_seed},
        {"sbm",
         {{"n", c.sbm.n},
          {"k_classes", c.sbm.k_classes},
          {"p_in", c.sbm.p_in},
          {"p_out", c.sbm.p_out},
          {"feat_dim", c.sbm.feat_dim},
          {"feat_separation", c.sbm.feat_separation}}},
        {"files", {{"edges", c.files.edges.string()}, {"features", c.files.features.string()}, {"labels", c.files.labels.string()}}},
        {"external_scores_dir", c.external_scores_dir}}},
      {"sequence", c.sequence == SequenceKind::node_inductive ? "node" : "edge"},
      {"split",
       {{"train_per_class", c.split.train_per_class},
        {"val_per_class", c.split.val_per_class},
        {"calibration", c.split.calibration}}},
      {"engines", c.engines},
      {"score", {{"kind", to_string(c.score.kind)}, {"daps_lambda", c.score.daps_lambda}}},
      {"alpha", c.alpha},
      {"seeds", c.seeds},
      {"policy", {{"kind", to_string(c.policy.kind)}, {"t", c.policy.fixed_t}, {"seed", c.policy.seed}}},
      {"model",
       {{"hops", c.training.hops},
        {"learning_rate", c.training.learning_rate},
        {"epochs", c.training.epochs},
        {"l2", c.training.l2}}},
      {"aggregate_every", c.aggregate_every},
      {"output_dir", c.output_dir},
  };
}

inline void from_json(const json& j, ExperimentConfig& c) {
  if (j.contains("data")) {
    const auto& d = j.at("data");
    c.source = d.value("source", c.source);
    c.graph_seed = d.value("graph_seed", c.graph_seed);
    if (d.contains("sbm")) {
      const auto& s = d.at("sbm");
      c.sbm.n = s.value("n", c.sbm.n);
      c.sbm.k_classes = s.value("k_classes", c.sbm.k_classes);
      c.sbm.p_in = s.value("p_in", c.sbm.p_in);
      c.sbm.p_out = s.value("p_out", c.sbm.p_out);
      c.sbm.feat_dim = s.value("feat_dim", c.sbm.feat_dim);
      c.sbm.feat_separation = s.value("feat_separation", c.sbm.feat_separation);
    }
    if (d.contains("files")) {
      const auto& f = d.at("files");
      c.files.edges = f.value("edges", std::string{});
      c.files.features = f.value("features", std::string{});
      c.files.labels = f.value("labels", std::string{});
    }
    c.external_scores_dir = d.value("external_scores_dir", c.external_scores_dir);
  }
  if (j.contains("sequence")) {
    const auto s = j.at("sequence").get<std::string>();
    if (s == "node") c.sequence = SequenceKind::node_inductive;
    else if (s == "edge") c.sequence = SequenceKind::edge_inductive;
    else throw DomainError("sequence must be 'node' or 'edge'");
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    c.split.train_per_class = s.value("train_per_class", c.split.train_per_class);
    c.split.val_per_class = s.value("val_per_class", c.split.val_per_class);
    c.split.calibration = s.value("calibration", c.split.calibration);
  }
  if (j.contains("engines")) c.engines = j.at("engines").get<std::vector<EngineConfig>>();
  if (j.contains("score")) {
    const auto& s = j.at("score");
    if (s.is_string()) {
      c.score.kind = score_kind_from_string(s.get<std::string>());
    } else {
      c.score.kind = score_kind_from_string(s.value("kind", std::string(to_string(c.score.kind))));
      c.score.daps_lambda = s.value("daps_lambda", c.score.daps_lambda);
    }
  }
  c.alpha = j.value("alpha", c.alpha);
  if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("policy")) {
    const auto& p = j.at("policy");
    const auto kind = p.is_string() ? p.get<std::string>() : p.value("kind", std::string("upon_arrival"));
    if (kind == "upon_arrival") c.policy = EvaluationPolicy::upon_arrival();
    else if (kind == "fixed_time") c.policy = EvaluationPolicy::fixed_time(p.is_object() ? p.value("t", std::size_t{0}) : 0);
    else if (kind == "random_time") c.policy = EvaluationPolicy::random_time(p.is_object() ? p.value("seed", std::uint64_t{0}) : 0);
    else throw DomainError("unknown evaluation policy: " + kind);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    c.training.hops = m.value("hops", c.training.hops);
    c.training.learning_rate = m.value("learning_rate", c.training.learning_rate);
    c.training.epochs = m.value("epochs", c.training.epochs);
    c.training.l2 = m.value("l2", c.training.l2);
  }
  c.aggregate_every = j.value("aggregate_every", c.aggregate_every);
  c.output_dir = j.value("output_dir", c.output_dir);
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open config");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(path.string(), 0, e.what());
  }
  auto c = j.get<ExperimentConfig>();
  // Relative data paths are taken relative to the config file.
  const fs::path dir = path.parent_path();
  for (fs::path* p : {&c.files.edges, &c.files.features, &c.files.labels})
    if (!p->empty() && p->is_relative()) *p = dir / *p;
  if (!c.external_scores_dir.empty() && fs::path(c.external_scores_dir).is_relative())
    c.external_scores_dir = (dir / c.external_scores_dir).string();
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

/// Everything produced for one seed.
struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<EngineRun> runs;
};

inline Graph experiment_graph(const ExperimentConfig& c) {
  if (c.source == "files") {
    auto loaded = load_graph(c.files);
    if (loaded.cleanup.self_loops || loaded.cleanup.duplicates)
      spdlog::warn("dropped {} self-loops and {} duplicate edges", loaded.cleanup.self_loops,
                   loaded.cleanup.duplicates);
    return std::move(loaded.graph);
  }
  Rng rng = make_rng(c.graph_seed, {0x6a7eULL});
  return sbm_homophilous(c.sbm, rng);
}

/// One seed: schedule, model trained on G_0, every engine under the policy.
inline SeedResult run_seed(const ExperimentConfig& c, const Graph& base, std::uint64_t seed) {
  SeedResult out;
  out.seed = seed;
  Rng rng = make_rng(seed, {0x5eedULL});
  const auto schedule = c.sequence == SequenceKind::node_inductive ? node_sequence(base, c.split, rng)
                                                                   : edge_sequence(base, c.split, rng);
  std::unique_ptr<ProbabilitySource> source;
  if (!c.external_scores_dir.empty()) {
    source = std::make_unique<ExternalProbabilities>(c.external_scores_dir);
  } else {
    const auto g0 = view_at(schedule, base, schedule.t0_train);
    source = std::make_unique<ModelProbabilities>(train(g0, schedule.train_nodes, c.training));
  }
  std::vector<EngineConfig> engines = c.engines;
  for (auto& e : engines) {
    e.alpha = c.alpha;
    e.score = c.score;
    e.seed = seed;
  }
  Scorer scorer{source.get(), c.score, seed};
  SequenceOptions options;
  options.aggregate_every = c.aggregate_every;
  out.runs = evaluate_sequence(base, schedule, scorer, engines, c.policy, options);
  out.ok = true;
  return out;
}

struct EngineSummary {
  std::string engine;
  std::size_t sequences = 0;
  double mean_coverage = 0.0;
  double std_coverage = 0.0;
  double deviation_percent = 0.0;  // mean of per-sequence |coverage - (1 - alpha)|, in percent
  double avg_size = 0.0;
  double singleton_hit = 0.0;
  std::optional<double> inapplicable_fraction;
};

inline std::vector<EngineSummary> summarize(const ExperimentConfig& c, const std::vector<SeedResult>& results) {
  std::vector<EngineSummary> out;
  for (std::size_t e = 0; e < c.engines.size(); ++e) {
    EngineSummary s;
    std::vector<double> cov, dev, size, hit, na;
    for (const auto& r : results) {
      if (!r.ok) continue;
      const auto& run = r.runs[e];
      s.engine = run.config.label();
      if (run.config.engine == EngineKind::naps) na.push_back(run.inapplicable_fraction());
      if (run.records.empty()) continue;
      cov.push_back(empirical_coverage(run.records));
      dev.push_back(deviation_from_target(run.records, c.alpha));
      size.push_back(avg_set_size(run.records));
      hit.push_back(singleton_hit_ratio(run.records));
    }
    if (s.engine.empty()) s.engine = c.engines[e].label();
    auto mean = [](const std::vector<double>& v) {
      return v.empty() ? std::nan("") : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    s.sequences = cov.size();
    s.mean_coverage = mean(cov);
    double var = 0.0;
    for (double x : cov) var += (x - s.mean_coverage) * (x - s.mean_coverage);
    s.std_coverage = cov.size() > 1 ? std::sqrt(var / static_cast<double>(cov.size() - 1)) : 0.0;
    s.deviation_percent = 100.0 * mean(dev);
    s.avg_size = mean(size);
    s.singleton_hit = mean(hit);
    if (!na.empty()) s.inapplicable_fraction = mean(na);
    out.push_back(s);
  }
  return out;
}

inline json summary_json(const ExperimentConfig& c, const std::vector<SeedResult>& results) {
  json engines = json::array();
  for (const auto& s : summarize(c, results)) {
    json e{{"engine", s.engine},
           {"sequences", s.sequences},
           {"mean_coverage", s.mean_coverage},
           {"std_coverage", s.std_coverage},
           {"deviation_percent", s.deviation_percent},
           {"avg_size", s.avg_size},
           {"singleton_hit", s.singleton_hit}};
    if (s.inapplicable_fraction) e["naps_inapplicable_fraction"] = *s.inapplicable_fraction;
    engines.push_back(e);
  }
  json failures = json::array();
  for (const auto& r : results)
    if (!r.ok) failures.push_back({{"seed", r.seed}, {"error", r.error}});
  return json{{"config", c}, {"engines", engines}, {"failed_seeds", failures}};
}

/// Runs all seeds on up to `workers` threads and writes records.csv, aggregates.csv
/// and summary.json. Output order follows the seed list, independent of scheduling.
/// Returns 0 unless every seed failed.
inline int run_experiment(const ExperimentConfig& c, unsigned workers, const fs::path& out_dir) {
  c.validate();
  const Graph base = experiment_graph(c);
  spdlog::info("graph: {} nodes, {} edges, {} classes", base.num_nodes(), base.num_edges(), base.num_classes());

  std::vector<SeedResult> results(c.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < c.seeds.size();) {
      const auto seed = c.seeds[i];
      try {
        results[i] = run_seed(c, base, seed);
        spdlog::info("seed {} done", seed);
      } catch (const std::exception& e) {
        results[i].seed = seed;
        results[i].error = e.what();
        spdlog::error("seed {} aborted: {}", seed, e.what());
      }
    }
  };
  const unsigned n_threads = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(c.seeds.size())));
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < n_threads; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  fs::create_directories(out_dir);
  std::ofstream records(out_dir / "records.csv"), aggregates(out_dir / "aggregates.csv");
  records << kRecordHeader << '\n';
  aggregates << kAggregateHeader << '\n';
  for (const auto& r : results) {
    if (!r.ok) continue;
    for (const auto& run : r.runs) {
      write_record_rows(records, run.records);
      write_aggregate_rows(aggregates, r.seed, run.config.label(), run.aggregates);
    }
  }
  std::ofstream(out_dir / "summary.json") << summary_json(c, results).dump(2) << '\n';

  const bool any_ok = std::any_of(results.begin(), results.end(), [](const SeedResult& r) { return r.ok; });
  return any_ok ? 0 : 1;
}

}  // namespace gcp
