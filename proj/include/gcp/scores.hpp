#pragma once

// Conformity score functions: TPS, APS and neighbor-diffused APS (DAPS).

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gcp/errors.hpp"
#include "gcp/graph.hpp"
#include "gcp/rng.hpp"

namespace gcp {

/// Row-stochastic class probabilities; rows follow the view's active-node order.
using ProbMatrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ScoreKind { tps, aps, daps };

inline const char* to_string(ScoreKind k) {
  switch (k) {
    case ScoreKind::tps: return "tps";
    case ScoreKind::aps: return "aps";
    case ScoreKind::daps: return "daps";
  }
  return "?";
}

inline ScoreKind score_kind_from_string(const std::string& s) {
  if (s == "tps") return ScoreKind::tps;
  if (s == "aps") return ScoreKind::aps;
  if (s == "daps") return ScoreKind::daps;
  throw DomainError("unknown score kind: " + s);
}

struct ScoreSpec {
  ScoreKind kind = ScoreKind::aps;
  double daps_lambda = 0.5;
};

/// Per-node, per-class conformity scores conditional on one view.
struct ScoreMatrix {
  RowMatrix values;
  ScoreKind kind = ScoreKind::aps;
  std::uint64_t timestep = 0;
  std::uint64_t stream = 0;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  std::span<const double> row(Eigen::Index r) const {
    return {values.data() + r * values.cols(), static_cast<std::size_t>(values.cols())};
  }
};

inline void validate_probabilities(const ProbMatrix& p, double tol = 1e-9) {
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    double sum = 0.0;
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const double x = p(r, c);
      if (!(x >= -tol && x <= 1.0 + tol)) throw DomainError("probability entry outside [0, 1]");
      sum += x;
    }
    if (std::abs(sum - 1.0) > tol) throw DomainError("probability row " + std::to_string(r) + " does not sum to 1");
  }
}

/// s[v, y] = pi(v)_y.
inline ScoreMatrix tps_scores(const ProbMatrix& probs) {
  validate_probabilities(probs);
  return {probs, ScoreKind::tps, 0, 0};
}

/// s[v, y] = -(rho(v, y) + u_v pi(v)_y), rho(v, y) = sum_c pi(v)_c [pi(v)_c > pi(v)_y].
inline ScoreMatrix aps_scores(const ProbMatrix& probs, std::span<const double> u) {
  validate_probabilities(probs);
  if (u.size() != static_cast<std::size_t>(probs.rows())) throw DimensionMismatch("one APS noise value per row required");
  ScoreMatrix out{RowMatrix(probs.rows(), probs.cols()), ScoreKind::aps, 0, 0};
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    const double ur = u[static_cast<std::size_t>(r)];
    if (!(ur >= 0.0 && ur <= 1.0)) throw DomainError("APS noise must lie in [0, 1]");
    for (Eigen::Index y = 0; y < probs.cols(); ++y) {
      const double py = probs(r, y);
      double rho = 0.0;
      for (Eigen::Index c = 0; c < probs.cols(); ++c)
        if (probs(r, c) > py) rho += probs(r, c);
      out.values(r, y) = -(rho + ur * py);
    }
  }
  return out;
}

/// One uniform value per active node keyed by (seed, stream, base node id).
inline std::vector<double> aps_noise(const GraphView& view, std::uint64_t seed, std::uint64_t stream) {
  std::vector<double> u;
  u.reserve(view.num_active());
  for (NodeId v : view.active_nodes()) u.push_back(unit_uniform(derive_seed(seed, {0xa9a5ULL, stream, v})));
  return u;
}

/// One-step neighbor diffusion: s' = (1 - lambda) s[v] + lambda mean_{u in N(v)} s[u].
/// Isolated nodes keep their scores.
inline ScoreMatrix daps_scores(const ScoreMatrix& base, const GraphView& view, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("DAPS lambda must lie in [0, 1]");
  if (base.rows() != static_cast<Eigen::Index>(view.num_active()))
    throw DimensionMismatch("score rows must cover the active nodes");
  ScoreMatrix out = base;
  out.kind = ScoreKind::daps;
  for (std::size_t r = 0; r < view.num_active(); ++r) {
    const auto nbrs = view.local_neighbors(r);
    if (nbrs.empty()) continue;
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(base.cols());
    for (auto n : nbrs) mean += base.values.row(n);
    mean /= static_cast<double>(nbrs.size());
    const auto er = static_cast<Eigen::Index>(r);
    out.values.row(er) = (1.0 - lambda) * base.values.row(er) + lambda * mean;
  }
  return out;
}

/// Scores from probabilities according to a spec; APS noise is keyed by (seed, stream).
inline ScoreMatrix score_probabilities(const ProbMatrix& probs, const GraphView& view, const ScoreSpec& spec,
                                       std::uint64_t seed, std::uint64_t stream) {
  ScoreMatrix s;
  switch (spec.kind) {
    case ScoreKind::tps:
      s = tps_scores(probs);
      break;
    case ScoreKind::aps:
      s = aps_scores(probs, aps_noise(view, seed, stream));
      break;
    case ScoreKind::daps:
      s = daps_scores(aps_scores(probs, aps_noise(view, seed, stream)), view, spec.daps_lambda);
      break;
  }
  s.timestep = view.timestep();
  s.stream = stream;
  return s;
}

}  // namespace gcp
