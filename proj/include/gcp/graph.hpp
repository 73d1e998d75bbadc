#pragma once

// Graph storage, inductive arrival schedules, per-timestep views and the
// synthetic generators (graphon sampling, homophilous block model).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gcp/errors.hpp"
#include "gcp/rng.hpp"

namespace gcp {

using NodeId = std::uint32_t;
using EdgeId = std::uint32_t;

/// Undirected edge stored with u < v.
struct Edge {
  NodeId u = 0;
  NodeId v = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

struct EdgeCleanup {
  std::size_t self_loops = 0;
  std::size_t duplicates = 0;
};

/// Symmetrizes raw pairs into canonical (u < v) edges, dropping self-loops and
/// repeated pairs. First occurrence order is kept.
inline std::vector<Edge> canonicalize_edges(std::span<const std::pair<NodeId, NodeId>> raw,
                                            EdgeCleanup* stats = nullptr) {
  std::vector<Edge> out;
  out.reserve(raw.size());
  std::vector<std::pair<NodeId, NodeId>> seen;
  seen.reserve(raw.size());
  EdgeCleanup local;
  for (auto [a, b] : raw) {
    if (a == b) {
      ++local.self_loops;
      continue;
    }
    seen.emplace_back(std::min(a, b), std::max(a, b));
  }
  std::vector<std::size_t> idx(seen.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return seen[i] < seen[j]; });
  std::vector<char> keep(seen.size(), 1);
  for (std::size_t k = 1; k < idx.size(); ++k)
    if (seen[idx[k]] == seen[idx[k - 1]]) {
      keep[idx[k]] = 0;
      ++local.duplicates;
    }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (keep[i]) out.push_back({seen[i].first, seen[i].second});
  if (stats) *stats = local;
  return out;
}

/// Sparse undirected graph with node features and class labels. Immutable after construction.
class Graph {
 public:
  Graph() = default;

  /// Edges must already be canonical (see canonicalize_edges).
  Graph(std::size_t num_nodes, std::vector<Edge> edges, Eigen::MatrixXd features, std::vector<int> labels,
        std::vector<std::int64_t> node_ids = {})
      : num_nodes_(num_nodes),
        edges_(std::move(edges)),
        features_(std::move(features)),
        labels_(std::move(labels)),
        node_ids_(std::move(node_ids)) {
    if (features_.rows() == 0 && features_.cols() == 0) features_.resize(static_cast<Eigen::Index>(num_nodes_), 0);
    if (labels_.empty()) labels_.assign(num_nodes_, 0);
    if (node_ids_.empty()) {
      node_ids_.resize(num_nodes_);
      std::iota(node_ids_.begin(), node_ids_.end(), std::int64_t{0});
    }
    if (static_cast<std::size_t>(features_.rows()) != num_nodes_)
      throw DimensionMismatch("feature rows (" + std::to_string(features_.rows()) + ") != num_nodes (" +
                              std::to_string(num_nodes_) + ")");
    if (labels_.size() != num_nodes_)
      throw DimensionMismatch("label count (" + std::to_string(labels_.size()) + ") != num_nodes (" +
                              std::to_string(num_nodes_) + ")");
    if (node_ids_.size() != num_nodes_) throw DimensionMismatch("node id count != num_nodes");
    for (int y : labels_)
      if (y < 0) throw DomainError("labels must be nonnegative class ids");
    num_classes_ = labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end()) + 1;
    build_adjacency();
  }

  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  std::span<const Edge> edges() const noexcept { return edges_; }
  const Edge& edge(EdgeId e) const { return edges_.at(e); }
  const Eigen::MatrixXd& features() const noexcept { return features_; }
  Eigen::Index feature_dim() const noexcept { return features_.cols(); }
  std::span<const int> labels() const noexcept { return labels_; }
  int label(NodeId v) const { return labels_.at(v); }
  int num_classes() const noexcept { return num_classes_; }
  std::span<const std::int64_t> node_ids() const noexcept { return node_ids_; }

  std::span<const NodeId> neighbors(NodeId v) const {
    return {nbr_.data() + offsets_[v], nbr_.data() + offsets_[v + 1]};
  }
  std::span<const EdgeId> incident_edges(NodeId v) const {
    return {inc_.data() + offsets_[v], inc_.data() + offsets_[v + 1]};
  }
  std::size_t degree(NodeId v) const { return offsets_[v + 1] - offsets_[v]; }

 private:
  void build_adjacency() {
    offsets_.assign(num_nodes_ + 1, 0);
    for (const auto& e : edges_) {
      if (e.u >= num_nodes_ || e.v >= num_nodes_)
        throw DomainError("edge endpoint out of range: (" + std::to_string(e.u) + ", " + std::to_string(e.v) + ")");
      if (e.u == e.v) throw DomainError("self-loops are not stored");
      ++offsets_[e.u + 1];
      ++offsets_[e.v + 1];
    }
    std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
    nbr_.resize(2 * edges_.size());
    inc_.resize(2 * edges_.size());
    auto fill = offsets_;
    for (EdgeId i = 0; i < edges_.size(); ++i) {
      const auto& e = edges_[i];
      nbr_[fill[e.u]] = e.v;
      inc_[fill[e.u]++] = i;
      nbr_[fill[e.v]] = e.u;
      inc_[fill[e.v]++] = i;
    }
  }

  std::size_t num_nodes_ = 0;
  std::vector<Edge> edges_;
  Eigen::MatrixXd features_;
  std::vector<int> labels_;
  std::vector<std::int64_t> node_ids_;
  int num_classes_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<NodeId> nbr_;
  std::vector<EdgeId> inc_;
};

// ---------------------------------------------------------------------------
// Arrival schedules

enum class SequenceKind { node_inductive, edge_inductive };

/// Order in which nodes (or edges) of a base graph arrive.
///
/// Layout of `order`: the G_0 prefix [0, t0_train) holding the training and
/// validation part, then the calibration block [t0_train, t0_cal), then test arrivals.
struct ArrivalSchedule {
  SequenceKind kind = SequenceKind::node_inductive;
  std::vector<std::uint32_t> order;
  std::size_t t0_train = 0;
  std::size_t t0_cal = 0;
  std::vector<NodeId> train_nodes;
  std::vector<NodeId> prefix_nodes;  // train + validation
  std::vector<NodeId> calibration_nodes;

  std::size_t length() const noexcept { return order.size(); }
};

struct SplitSpec {
  std::size_t train_per_class = 0;
  std::size_t val_per_class = 0;
  /// Calibration nodes (node sequences) or calibration edges (edge sequences).
  std::size_t calibration = 0;
};

struct PrefixSplit {
  std::vector<NodeId> train;
  std::vector<NodeId> validation;
};

/// Stratified sample of training and validation nodes (per class, without replacement).
inline PrefixSplit stratified_prefix(const Graph& base, std::size_t train_per_class, std::size_t val_per_class,
                                     Rng& rng) {
  PrefixSplit split;
  if (train_per_class == 0 && val_per_class == 0) return split;
  std::vector<std::vector<NodeId>> by_class(static_cast<std::size_t>(base.num_classes()));
  for (NodeId v = 0; v < base.num_nodes(); ++v) by_class[static_cast<std::size_t>(base.label(v))].push_back(v);
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const std::size_t nt = std::min(train_per_class, members.size());
    const std::size_t nv = std::min(val_per_class, members.size() - nt);
    split.train.insert(split.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(nt));
    split.validation.insert(split.validation.end(), members.begin() + static_cast<std::ptrdiff_t>(nt),
                            members.begin() + static_cast<std::ptrdiff_t>(nt + nv));
  }
  return split;
}

/// Node-exchangeable schedule: G_0 prefix pinned first, then a uniformly random
/// permutation of all remaining nodes whose first `spec.calibration` entries form
/// the calibration set.
inline ArrivalSchedule node_sequence(const Graph& base, const SplitSpec& spec, Rng& rng) {
  if (base.num_nodes() == 0) throw DomainError("node_sequence on an empty graph");
  ArrivalSchedule s;
  s.kind = SequenceKind::node_inductive;
  auto split = stratified_prefix(base, spec.train_per_class, spec.val_per_class, rng);
  s.train_nodes = split.train;
  s.prefix_nodes = split.train;
  s.prefix_nodes.insert(s.prefix_nodes.end(), split.validation.begin(), split.validation.end());

  std::vector<char> pinned(base.num_nodes(), 0);
  for (NodeId v : s.prefix_nodes) pinned[v] = 1;
  std::vector<NodeId> free;
  free.reserve(base.num_nodes() - s.prefix_nodes.size());
  for (NodeId v = 0; v < base.num_nodes(); ++v)
    if (!pinned[v]) free.push_back(v);
  if (spec.calibration > free.size()) throw DomainError("calibration size exceeds the available nodes");
  std::shuffle(free.begin(), free.end(), rng);

  s.order = s.prefix_nodes;
  s.order.insert(s.order.end(), free.begin(), free.end());
  s.t0_train = s.prefix_nodes.size();
  s.t0_cal = s.t0_train + spec.calibration;
  s.calibration_nodes.assign(free.begin(), free.begin() + static_cast<std::ptrdiff_t>(spec.calibration));
  return s;
}

/// Edge-exchangeable schedule: edges inside the G_0 prefix first (train and
/// validation nodes without such an edge are dropped from the prefix), then
/// `spec.calibration` calibration edges (no G_0 endpoint; both endpoints become
/// calibration nodes), then the remaining edges in uniformly random order.
inline ArrivalSchedule edge_sequence(const Graph& base, const SplitSpec& spec, Rng& rng) {
  if (base.num_edges() == 0) throw DomainError("edge_sequence needs at least one edge");
  ArrivalSchedule s;
  s.kind = SequenceKind::edge_inductive;
  auto split = stratified_prefix(base, spec.train_per_class, spec.val_per_class, rng);
  s.train_nodes = split.train;
  s.prefix_nodes = split.train;
  s.prefix_nodes.insert(s.prefix_nodes.end(), split.validation.begin(), split.validation.end());

  std::vector<char> pinned(base.num_nodes(), 0);
  for (NodeId v : s.prefix_nodes) pinned[v] = 1;

  std::vector<EdgeId> inside, rest;
  for (EdgeId e = 0; e < base.num_edges(); ++e) {
    const auto& ed = base.edge(e);
    (pinned[ed.u] && pinned[ed.v] ? inside : rest).push_back(e);
  }
  // Prefix nodes without an edge inside G_0 never activate there; they are unpinned
  // and arrive like any other node.
  std::vector<char> touched(base.num_nodes(), 0);
  for (EdgeId e : inside) touched[base.edge(e).u] = touched[base.edge(e).v] = 1;
  const auto keep = [&](std::vector<NodeId>& nodes) {
    std::erase_if(nodes, [&](NodeId v) { return !touched[v]; });
  };
  keep(s.train_nodes);
  keep(s.prefix_nodes);
  if (s.train_nodes.empty() && spec.train_per_class > 0) throw DomainError("no training node has an edge inside G_0");
  pinned = touched;
  std::shuffle(inside.begin(), inside.end(), rng);
  std::shuffle(rest.begin(), rest.end(), rng);

  std::vector<EdgeId> cal, later;
  for (EdgeId e : rest) {
    const auto& ed = base.edge(e);
    if (cal.size() < spec.calibration && !pinned[ed.u] && !pinned[ed.v])
      cal.push_back(e);
    else
      later.push_back(e);
  }
  if (cal.size() < spec.calibration) throw DomainError("not enough edges outside G_0 for calibration");

  s.order = inside;
  s.order.insert(s.order.end(), cal.begin(), cal.end());
  s.order.insert(s.order.end(), later.begin(), later.end());
  s.t0_train = inside.size();
  s.t0_cal = s.t0_train + cal.size();

  std::vector<char> seen(base.num_nodes(), 0);
  for (EdgeId e : cal)
    for (NodeId v : {base.edge(e).u, base.edge(e).v})
      if (!seen[v]) {
        seen[v] = 1;
        s.calibration_nodes.push_back(v);
      }
  return s;
}

// ---------------------------------------------------------------------------
// Views

/// The active part of a base graph at one timestep. Rows (local indices) follow
/// activation order.
class GraphView {
 public:
  GraphView() = default;

  /// All base edges among `nodes` (node-inductive semantics).
  static GraphView induced(const Graph& base, std::span<const NodeId> nodes, std::size_t timestep) {
    GraphView view(base, timestep);
    for (NodeId v : nodes) view.activate(v);
    std::vector<EdgeId> edges;
    for (NodeId v : nodes)
      for (std::size_t k = 0; k < base.degree(v); ++k) {
        const NodeId w = base.neighbors(v)[k];
        if (v < w && view.local_[w] >= 0) edges.push_back(base.incident_edges(v)[k]);
      }
    std::sort(edges.begin(), edges.end());
    view.edges_ = std::move(edges);
    view.build_local_adjacency();
    return view;
  }

  /// The given edges with their endpoints (edge-inductive semantics).
  static GraphView from_edges(const Graph& base, std::span<const EdgeId> edges, std::size_t timestep) {
    GraphView view(base, timestep);
    for (EdgeId e : edges) {
      const auto& ed = base.edge(e);
      view.activate(ed.u);
      view.activate(ed.v);
    }
    view.edges_.assign(edges.begin(), edges.end());
    std::sort(view.edges_.begin(), view.edges_.end());
    view.build_local_adjacency();
    return view;
  }

  const Graph& base() const { return *base_; }
  std::size_t timestep() const noexcept { return timestep_; }
  std::size_t num_active() const noexcept { return nodes_.size(); }
  std::span<const NodeId> active_nodes() const noexcept { return nodes_; }
  std::span<const EdgeId> active_edges() const noexcept { return edges_; }
  bool is_active(NodeId v) const noexcept { return v < local_.size() && local_[v] >= 0; }

  /// Row of an active node; throws InactiveNode otherwise.
  std::size_t row_of(NodeId v) const {
    if (!is_active(v)) throw InactiveNode(v);
    return static_cast<std::size_t>(local_[v]);
  }

  /// Neighbor rows of a row.
  std::span<const std::uint32_t> local_neighbors(std::size_t row) const {
    return {lnbr_.data() + loff_[row], lnbr_.data() + loff_[row + 1]};
  }
  std::size_t local_degree(std::size_t row) const { return loff_[row + 1] - loff_[row]; }

  /// Rows within `hops` steps of `row` (breadth-first, includes `row`).
  std::vector<std::size_t> rows_within(std::size_t row, int hops) const {
    std::vector<std::size_t> out{row};
    std::vector<int> dist(nodes_.size(), -1);
    dist[row] = 0;
    std::deque<std::size_t> queue{row};
    while (!queue.empty()) {
      const auto r = queue.front();
      queue.pop_front();
      if (dist[r] >= hops) continue;
      for (auto n : local_neighbors(r))
        if (dist[n] < 0) {
          dist[n] = dist[r] + 1;
          out.push_back(n);
          queue.push_back(n);
        }
    }
    return out;
  }

 private:
  GraphView(const Graph& base, std::size_t timestep)
      : base_(&base), timestep_(timestep), local_(base.num_nodes(), -1) {}

  void activate(NodeId v) {
    if (v >= base_->num_nodes()) throw DomainError("node id out of range");
    if (local_[v] >= 0) return;
    local_[v] = static_cast<std::int64_t>(nodes_.size());
    nodes_.push_back(v);
  }

  void build_local_adjacency() {
    loff_.assign(nodes_.size() + 1, 0);
    for (EdgeId e : edges_) {
      const auto& ed = base_->edge(e);
      ++loff_[static_cast<std::size_t>(local_[ed.u]) + 1];
      ++loff_[static_cast<std::size_t>(local_[ed.v]) + 1];
    }
    std::partial_sum(loff_.begin(), loff_.end(), loff_.begin());
    lnbr_.resize(2 * edges_.size());
    auto fill = loff_;
    for (EdgeId e : edges_) {
      const auto& ed = base_->edge(e);
      const auto a = static_cast<std::size_t>(local_[ed.u]);
      const auto b = static_cast<std::size_t>(local_[ed.v]);
      lnbr_[fill[a]++] = static_cast<std::uint32_t>(b);
      lnbr_[fill[b]++] = static_cast<std::uint32_t>(a);
    }
  }

  const Graph* base_ = nullptr;
  std::size_t timestep_ = 0;
  std::vector<NodeId> nodes_;
  std::vector<EdgeId> edges_;
  std::vector<std::int64_t> local_;
  std::vector<std::size_t> loff_{0};
  std::vector<std::uint32_t> lnbr_;
};

/// G_t: the first t arrivals of the schedule.
inline GraphView view_at(const ArrivalSchedule& schedule, const Graph& base, std::size_t t) {
  if (t > schedule.length())
    throw DomainError("timestep " + std::to_string(t) + " beyond schedule length " +
                      std::to_string(schedule.length()));
  std::span<const std::uint32_t> prefix(schedule.order.data(), t);
  if (schedule.kind == SequenceKind::node_inductive) return GraphView::induced(base, prefix, t);
  return GraphView::from_edges(base, prefix, t);
}

/// Number of active edges incident to v at this timestep.
inline std::size_t degree_in_view(const GraphView& view, NodeId v) { return view.local_degree(view.row_of(v)); }

/// Timestep at which each node becomes active (0-based arrival index + 1); nullopt if never.
inline std::vector<std::optional<std::size_t>> activation_times(const ArrivalSchedule& schedule, const Graph& base) {
  std::vector<std::optional<std::size_t>> out(base.num_nodes());
  for (std::size_t i = 0; i < schedule.order.size(); ++i) {
    if (schedule.kind == SequenceKind::node_inductive) {
      out[schedule.order[i]] = i + 1;
    } else {
      const auto& e = base.edge(schedule.order[i]);
      for (NodeId v : {e.u, e.v})
        if (!out[v]) out[v] = i + 1;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Generators

/// Samples an undirected simple graph from a graphon W: latent u_i ~ U[0,1] per
/// node, edge {i,j} with probability W(u_i, u_j). Features are empty and labels
/// zero; callers attach their own. Latent positions are written to `latent` if given.
template <class Kernel>
Graph graphon_sample(Kernel&& w, std::size_t n, Rng& rng, std::vector<double>* latent = nullptr) {
  if (n == 0) throw DomainError("graphon_sample needs n >= 1");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> u(n);
  for (auto& x : u) x = unif(rng);
  std::vector<Edge> edges;
  for (NodeId i = 0; i < n; ++i)
    for (NodeId j = i + 1; j < n; ++j)
      if (unif(rng) < w(u[i], u[j])) edges.push_back({i, j});
  if (latent) *latent = u;
  return Graph(n, std::move(edges), Eigen::MatrixXd(static_cast<Eigen::Index>(n), 0), std::vector<int>(n, 0));
}

struct SbmSpec {
  std::size_t n = 1500;
  int k_classes = 4;
  double p_in = 0.05;
  double p_out = 0.005;
  int feat_dim = 16;
  double feat_separation = 1.0;
};

/// Homophilous stochastic block model as a piecewise-constant graphon: block
/// floor(u k) for latent u, edge probability p_in within a block and p_out across.
/// Labels are block ids; features are N(mu_label, I) with mu_c = separation * e_(c mod d).
inline Graph sbm_homophilous(const SbmSpec& spec, Rng& rng) {
  if (spec.k_classes < 1) throw DomainError("k_classes must be positive");
  if (!(spec.p_out >= 0.0 && spec.p_out <= spec.p_in && spec.p_in <= 1.0))
    throw DomainError("SBM requires 0 <= p_out <= p_in <= 1");
  const int k = spec.k_classes;
  auto block = [k](double u) { return std::min(static_cast<int>(u * k), k - 1); };
  std::vector<double> latent;
  Graph topology = graphon_sample(
      [&](double a, double b) { return block(a) == block(b) ? spec.p_in : spec.p_out; }, spec.n, rng, &latent);

  std::vector<int> labels(spec.n);
  for (std::size_t i = 0; i < spec.n; ++i) labels[i] = block(latent[i]);

  std::normal_distribution<double> noise(0.0, 1.0);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(spec.n), spec.feat_dim);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = noise(rng);
  if (spec.feat_dim > 0)
    for (std::size_t i = 0; i < spec.n; ++i)
      x(static_cast<Eigen::Index>(i), labels[i] % spec.feat_dim) += spec.feat_separation;

  std::vector<Edge> edges(topology.edges().begin(), topology.edges().end());
  return Graph(spec.n, std::move(edges), std::move(x), std::move(labels));
}

/// Fraction of edges whose endpoints share a label.
inline double edge_homophily(const Graph& g) {
  if (g.num_edges() == 0) return 0.0;
  std::size_t same = 0;
  for (const auto& e : g.edges()) same += g.label(e.u) == g.label(e.v);
  return static_cast<double>(same) / static_cast<double>(g.num_edges());
}

}  // namespace gcp
