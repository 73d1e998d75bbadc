#pragma once

// File ingestion and result emission.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <fmt/format.h>

#include "gcp/engines.hpp"
#include "gcp/errors.hpp"
#include "gcp/eval.hpp"
#include "gcp/graph.hpp"

namespace gcp {

namespace fs = std::filesystem;

namespace detail {

inline std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  return in;
}

/// Splits on commas and whitespace, dropping empty fields.
inline std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',' || c == ' ' || c == '\t' || c == '\r') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline bool skippable(const std::string& line) {
  const auto pos = line.find_first_not_of(" \t\r");
  return pos == std::string::npos || line[pos] == '#';
}

template <class T>
T parse_number(const std::string& field, const fs::path& path, std::size_t line) {
  std::istringstream ss(field);
  T value{};
  ss >> value;
  if (ss.fail() || !ss.eof()) throw ParseError(path.string(), line, "not a number: '" + field + "'");
  return value;
}

}  // namespace detail

struct EdgeListFile {
  std::vector<std::pair<NodeId, NodeId>> edges;
  NodeId max_id = 0;
};

/// Two integer columns per line, whitespace or comma separated. '#' starts a comment line.
inline EdgeListFile read_edge_list(const fs::path& path) {
  auto in = detail::open_input(path);
  EdgeListFile out;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (detail::skippable(line)) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != 2) throw ParseError(path.string(), no, "expected two node ids");
    const auto a = detail::parse_number<long long>(f[0], path, no);
    const auto b = detail::parse_number<long long>(f[1], path, no);
    if (a < 0 || b < 0) throw ParseError(path.string(), no, "negative node id");
    out.edges.emplace_back(static_cast<NodeId>(a), static_cast<NodeId>(b));
    out.max_id = std::max({out.max_id, static_cast<NodeId>(a), static_cast<NodeId>(b)});
  }
  return out;
}

/// Dense CSV of reals; all rows must have the same width.
inline Eigen::MatrixXd read_matrix_csv(const fs::path& path) {
  auto in = detail::open_input(path);
  std::vector<std::vector<double>> rows;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (detail::skippable(line)) continue;
    const auto f = detail::split_fields(line);
    std::vector<double> row;
    for (const auto& x : f) row.push_back(detail::parse_number<double>(x, path, no));
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(path.string(), no, fmt::format("expected {} columns, found {}", rows.front().size(), row.size()));
    rows.push_back(std::move(row));
  }
  const auto cols = rows.empty() ? 0 : rows.front().size();
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

inline std::vector<int> read_labels_csv(const fs::path& path) {
  auto in = detail::open_input(path);
  std::vector<int> labels;
  std::string line;
  for (std::size_t no = 1; std::getline(in, line); ++no) {
    if (detail::skippable(line)) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != 1) throw ParseError(path.string(), no, "expected one label per line");
    const int y = detail::parse_number<int>(f[0], path, no);
    if (y < 0) throw ParseError(path.string(), no, "negative label");
    labels.push_back(y);
  }
  return labels;
}

struct GraphFiles {
  fs::path edges;
  fs::path features;
  fs::path labels;
};

struct LoadedGraph {
  Graph graph;
  EdgeCleanup cleanup;
};

/// Node count comes from the labels file; features must match it row for row.
inline LoadedGraph load_graph(const GraphFiles& files) {
  const auto raw = read_edge_list(files.edges);
  auto x = read_matrix_csv(files.features);
  auto y = read_labels_csv(files.labels);
  const std::size_t n = y.size();
  if (static_cast<std::size_t>(x.rows()) != n)
    throw DimensionMismatch(fmt::format("{} feature rows but {} labels", x.rows(), n));
  if (!raw.edges.empty() && raw.max_id >= n)
    throw DimensionMismatch(fmt::format("edge endpoint {} but only {} nodes", raw.max_id, n));
  EdgeCleanup cleanup;
  auto edges = canonicalize_edges(raw.edges, &cleanup);
  return {Graph(n, std::move(edges), std::move(x), std::move(y)), cleanup};
}

inline void write_graph(const Graph& g, const GraphFiles& files) {
  std::ofstream e(files.edges), f(files.features), l(files.labels);
  if (!e || !f || !l) throw Error("cannot open graph output files");
  for (const auto& ed : g.edges()) e << ed.u << ' ' << ed.v << '\n';
  const auto& x = g.features();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) f << (j ? "," : "") << fmt::format("{:.17g}", x(i, j));
    f << '\n';
  }
  for (int y : g.labels()) l << y << '\n';
}

// ---------------------------------------------------------------------------
// Result CSVs

inline std::string format_real(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return fmt::format("{:.17g}", x);
}

constexpr const char* kRecordHeader = "seed,engine,node_id,arrival_t,eval_t,set_size,covered,q_used";
constexpr const char* kAggregateHeader = "seed,engine,t,coverage,avg_size,singleton_hit,emd_cal,emd_test";

inline void write_record_rows(std::ostream& out, std::span<const PredictionSetRecord> records) {
  for (const auto& r : records)
    out << fmt::format("{},{},{},{},{},{},{},{}\n", r.seed, r.engine, r.node, r.arrival_t, r.eval_t, r.set_size,
                       r.covered ? 1 : 0, format_real(r.q_used));
}

inline void write_aggregate_rows(std::ostream& out, std::uint64_t seed, const std::string& engine,
                                 std::span<const TimestepAggregate> aggregates) {
  for (const auto& a : aggregates)
    out << fmt::format("{},{},{},{},{},{},{},{}\n", seed, engine, a.t, format_real(a.coverage), format_real(a.avg_size),
                       format_real(a.singleton_hit), format_real(a.emd_cal), format_real(a.emd_test));
}

// ---------------------------------------------------------------------------
// Externally computed probabilities

/// Reads probs_<t>.csv from a directory: one row per active node of G_t in
/// activation order. Intended for node-inductive schedules whose order matches
/// the files.
class ExternalProbabilities final : public ProbabilitySource {
 public:
  explicit ExternalProbabilities(fs::path dir) : dir_(std::move(dir)) {
    if (!fs::is_directory(dir_)) throw Error("external scores directory not found: " + dir_.string());
  }

  ProbMatrix probabilities(const GraphView& view) const override {
    const auto path = dir_ / fmt::format("probs_{}.csv", view.timestep());
    auto p = read_matrix_csv(path);
    if (static_cast<std::size_t>(p.rows()) != view.num_active())
      throw DimensionMismatch(fmt::format("{}: {} rows for {} active nodes", path.string(), p.rows(), view.num_active()));
    if (p.cols() != view.base().num_classes())
      throw DimensionMismatch(fmt::format("{}: {} columns for {} classes", path.string(), p.cols(),
                                          view.base().num_classes()));
    validate_probabilities(p, 1e-6);
    // Files carry rounded decimals; renormalize so downstream checks hold at full precision.
    for (Eigen::Index r = 0; r < p.rows(); ++r) p.row(r) /= p.row(r).sum();
    return p;
  }

 private:
  fs::path dir_;
};

}  // namespace gcp
