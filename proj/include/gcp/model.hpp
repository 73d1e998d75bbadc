#pragma once

// Diffused-feature softmax classifier: probs = softmax(A_hat^hops X W + b),
// evaluated on the active part of a view only.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "gcp/errors.hpp"
#include "gcp/graph.hpp"
#include "gcp/scores.hpp"

namespace gcp {

using SparseOperator = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// D^{-1/2} (A + I) D^{-1/2} over the active nodes, D the self-loop-augmented degree.
inline SparseOperator normalized_adjacency(const GraphView& view) {
  const auto n = static_cast<Eigen::Index>(view.num_active());
  std::vector<double> inv_sqrt(view.num_active());
  for (std::size_t r = 0; r < view.num_active(); ++r)
    inv_sqrt[r] = 1.0 / std::sqrt(static_cast<double>(view.local_degree(r)) + 1.0);
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(view.num_active() + 2 * view.active_edges().size());
  for (std::size_t r = 0; r < view.num_active(); ++r) {
    const auto er = static_cast<Eigen::Index>(r);
    entries.emplace_back(er, er, inv_sqrt[r] * inv_sqrt[r]);
    for (auto c : view.local_neighbors(r)) entries.emplace_back(er, static_cast<Eigen::Index>(c), inv_sqrt[r] * inv_sqrt[c]);
  }
  SparseOperator a(n, n);
  a.setFromTriplets(entries.begin(), entries.end());
  return a;
}

/// Feature rows of the active nodes, in view order.
inline Eigen::MatrixXd view_features(const GraphView& view) {
  const auto& x = view.base().features();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(view.num_active()), x.cols());
  for (std::size_t r = 0; r < view.num_active(); ++r)
    out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(view.active_nodes()[r]));
  return out;
}

/// A_hat^hops applied to the rows of `m`.
inline Eigen::MatrixXd propagate(const GraphView& view, Eigen::MatrixXd m, int hops) {
  if (hops <= 0) return m;
  const auto a = normalized_adjacency(view);
  for (int h = 0; h < hops; ++h) m = a * m;
  return m;
}

inline Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double peak = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - peak).exp().matrix();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

struct TrainingOptions {
  int hops = 2;
  double learning_rate = 0.1;
  int epochs = 300;
  double l2 = 5e-4;
};

/// Permutation-equivariant node classifier. hops = 0 ignores the graph.
struct EquivariantClassifier {
  Eigen::MatrixXd weight;     // d x k
  Eigen::RowVectorXd bias;    // k
  int hops = 0;
  std::string trained_on;

  int num_classes() const { return static_cast<int>(weight.cols()); }
};

inline EquivariantClassifier zero_classifier(Eigen::Index feature_dim, int num_classes, int hops) {
  return {Eigen::MatrixXd::Zero(feature_dim, num_classes), Eigen::RowVectorXd::Zero(num_classes), hops, "init"};
}

/// Class probabilities for every active node of the view, conditional on the view only.
inline ProbMatrix forward(const EquivariantClassifier& model, const GraphView& view) {
  if (view.base().feature_dim() != model.weight.rows())
    throw DimensionMismatch("feature dim " + std::to_string(view.base().feature_dim()) + " != weight rows " +
                            std::to_string(model.weight.rows()));
  if (view.num_active() == 0) return ProbMatrix(0, model.weight.cols());
  // A^h X W == A^h (X W); propagating k columns is cheaper than d.
  Eigen::MatrixXd logits = propagate(view, view_features(view) * model.weight, model.hops);
  logits.rowwise() += model.bias;
  return row_softmax(logits);
}

struct LossGradient {
  double loss = 0.0;
  Eigen::MatrixXd d_weight;
  Eigen::RowVectorXd d_bias;
};

/// Mean cross-entropy of softmax(inputs W + b) plus (l2 / 2) ||W||^2, with its gradient.
inline LossGradient cross_entropy_gradient(const EquivariantClassifier& model, const Eigen::MatrixXd& inputs,
                                           std::span<const int> labels, double l2) {
  const auto n = inputs.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw DimensionMismatch("one label per input row required");
  Eigen::MatrixXd logits = inputs * model.weight;
  logits.rowwise() += model.bias;
  Eigen::MatrixXd p = row_softmax(logits);
  LossGradient g;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    g.loss -= std::log(std::max(p(i, y), 1e-300));
    p(i, y) -= 1.0;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  g.loss = g.loss * inv_n + 0.5 * l2 * model.weight.squaredNorm();
  g.d_weight = inputs.transpose() * p * inv_n + l2 * model.weight;
  g.d_bias = p.colwise().sum() * inv_n;
  return g;
}

/// Full-batch gradient descent from zero initialization on the training nodes of
/// the G_0 view. The per-epoch loss is appended to `loss_history` if given.
inline EquivariantClassifier train(const GraphView& g0, std::span<const NodeId> train_nodes,
                                   const TrainingOptions& options, std::vector<double>* loss_history = nullptr) {
  if (train_nodes.empty()) throw DomainError("empty training set");
  const Graph& base = g0.base();
  auto model = zero_classifier(base.feature_dim(), base.num_classes(), options.hops);
  model.trained_on = "G0(" + std::to_string(g0.num_active()) + " nodes, " + std::to_string(g0.active_edges().size()) +
                     " edges)";
  const Eigen::MatrixXd diffused = propagate(g0, view_features(g0), options.hops);
  Eigen::MatrixXd inputs(static_cast<Eigen::Index>(train_nodes.size()), diffused.cols());
  std::vector<int> labels;
  labels.reserve(train_nodes.size());
  for (std::size_t i = 0; i < train_nodes.size(); ++i) {
    inputs.row(static_cast<Eigen::Index>(i)) = diffused.row(static_cast<Eigen::Index>(g0.row_of(train_nodes[i])));
    labels.push_back(base.label(train_nodes[i]));
  }
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const auto g = cross_entropy_gradient(model, inputs, labels, options.l2);
    if (loss_history) loss_history->push_back(g.loss);
    model.weight -= options.learning_rate * g.d_weight;
    model.bias -= options.learning_rate * g.d_bias;
  }
  return model;
}

}  // namespace gcp
