#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "gcp/engines.hpp"
#include "gcp/graph.hpp"
#include "gcp/model.hpp"
#include "oracles.hpp"

using namespace gcp;

namespace {

GraphView full_view(const Graph& g) {
  std::vector<NodeId> all(g.num_nodes());
  std::iota(all.begin(), all.end(), NodeId{0});
  return GraphView::induced(g, all, g.num_nodes());
}

EquivariantClassifier random_model(Eigen::Index d, int k, int hops, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  auto m = zero_classifier(d, k, hops);
  for (Eigen::Index i = 0; i < d; ++i)
    for (int j = 0; j < k; ++j) m.weight(i, j) = z(rng);
  for (int j = 0; j < k; ++j) m.bias(j) = z(rng);
  return m;
}

}  // namespace

TEST(NormalizedAdjacency, SingleNode) {
  const Graph g(1, {}, Eigen::MatrixXd::Zero(1, 1), {0});
  const Eigen::MatrixXd a = normalized_adjacency(full_view(g));
  EXPECT_EQ(a.rows(), 1);
  EXPECT_DOUBLE_EQ(a(0, 0), 1.0);
}

TEST(NormalizedAdjacency, OneEdge) {
  const Graph g(2, {{0, 1}}, Eigen::MatrixXd::Zero(2, 1), {0, 0});
  const Eigen::MatrixXd a = normalized_adjacency(full_view(g));
  EXPECT_DOUBLE_EQ(a(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(a(1, 1), 0.5);
  EXPECT_DOUBLE_EQ(a(0, 1), 0.5);
  EXPECT_DOUBLE_EQ(a(1, 0), 0.5);
}

TEST(NormalizedAdjacency, MatchesDenseOracle) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 30; ++trial) {
    const auto g = oracle::random_graph(15 + trial, 0.2, 1, 2, rng);
    const Eigen::MatrixXd a = normalized_adjacency(full_view(g));
    const std::vector<Edge> edges(g.edges().begin(), g.edges().end());
    const auto expected = oracle::dense_normalized(oracle::dense_adjacency(g.num_nodes(), edges));
    EXPECT_LE((a - expected).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((a - a.transpose()).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Forward, ZeroModelIsUniform) {
  std::mt19937_64 rng(1);
  const auto g = oracle::random_graph(10, 0.3, 3, 4, rng);
  const auto p = forward(zero_classifier(3, 4, 0), full_view(g));
  EXPECT_LE((p.array() - 0.25).abs().maxCoeff(), 1e-15);
}

TEST(Forward, PathGraphMatchesDensePipeline) {
  std::mt19937_64 rng(2);
  const std::vector<Edge> edges{{0, 1}, {1, 2}, {2, 3}, {3, 4}};
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::MatrixXd x(5, 3);
  for (Eigen::Index i = 0; i < 5; ++i)
    for (Eigen::Index j = 0; j < 3; ++j) x(i, j) = z(rng);
  const Graph g(5, edges, x, {0, 1, 2, 0, 1});
  for (int hops : {0, 1, 2}) {
    const auto m = random_model(3, 3, hops, rng);
    const Eigen::MatrixXd a = oracle::dense_normalized(oracle::dense_adjacency(5, edges));
    Eigen::MatrixXd h = x;
    for (int i = 0; i < hops; ++i) h = a * h;
    Eigen::MatrixXd logits = h * m.weight;
    logits.rowwise() += m.bias;
    const auto expected = oracle::dense_softmax(logits);
    EXPECT_LE((forward(m, full_view(g)) - expected).cwiseAbs().maxCoeff(), 1e-10) << "hops " << hops;
  }
}

TEST(Forward, DimensionMismatch) {
  std::mt19937_64 rng(3);
  const auto g = oracle::random_graph(5, 0.5, 3, 2, rng);
  EXPECT_THROW(forward(zero_classifier(4, 2, 1), full_view(g)), DimensionMismatch);
}

TEST(Forward, PermutationEquivariant) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = oracle::random_graph(20, 0.15, 4, 3, rng);
    std::vector<NodeId> perm(20);
    std::iota(perm.begin(), perm.end(), NodeId{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto gp = oracle::permute_graph(g, perm);
    const auto m = random_model(4, 3, 2, rng);
    const auto p = forward(m, full_view(g)), pp = forward(m, full_view(gp));
    for (NodeId v = 0; v < 20; ++v) EXPECT_LE((p.row(v) - pp.row(perm[v])).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(Forward, DependsOnlyOnTheActiveSubgraph) {
  std::mt19937_64 rng(5);
  const auto g = oracle::random_graph(12, 0.3, 2, 2, rng);
  // Same graph plus an isolated node that never becomes active.
  Eigen::MatrixXd x(13, 2);
  x.topRows(12) = g.features();
  x.row(12) << 100.0, -100.0;
  std::vector<int> y(g.labels().begin(), g.labels().end());
  y.push_back(1);
  std::vector<Edge> edges(g.edges().begin(), g.edges().end());
  const Graph bigger(13, edges, x, y);
  const std::vector<NodeId> active{3, 1, 4, 0, 5, 9, 2};
  const auto m = random_model(2, 2, 2, rng);
  const auto a = forward(m, GraphView::induced(g, active, 7));
  const auto b = forward(m, GraphView::induced(bigger, active, 7));
  EXPECT_EQ(a, b);
}

TEST(Gradient, MatchesCentralFiniteDifferences) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    const Eigen::Index n = 8, d = 3;
    const int k = 3;
    Eigen::MatrixXd inputs(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d; ++j) inputs(i, j) = z(rng);
    std::vector<int> labels{0, 1, 2, 0, 1, 2, 1, 1};
    auto m = random_model(d, k, 0, rng);
    const double l2 = 0.05;
    const auto g = cross_entropy_gradient(m, inputs, labels, l2);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < d; ++i)
      for (int j = 0; j < k; ++j) {
        auto plus = m, minus = m;
        plus.weight(i, j) += h;
        minus.weight(i, j) -= h;
        const double fd = (cross_entropy_gradient(plus, inputs, labels, l2).loss -
                           cross_entropy_gradient(minus, inputs, labels, l2).loss) /
                          (2 * h);
        EXPECT_NEAR(g.d_weight(i, j), fd, 1e-5 * std::max(1.0, std::abs(fd)));
      }
    for (int j = 0; j < k; ++j) {
      auto plus = m, minus = m;
      plus.bias(j) += h;
      minus.bias(j) -= h;
      const double fd = (cross_entropy_gradient(plus, inputs, labels, l2).loss -
                         cross_entropy_gradient(minus, inputs, labels, l2).loss) /
                        (2 * h);
      EXPECT_NEAR(g.d_bias(j), fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Train, ZeroEpochsReturnsInitialization) {
  std::mt19937_64 rng(7);
  const auto g = oracle::random_graph(10, 0.3, 3, 2, rng);
  const std::vector<NodeId> tr{0, 1, 2};
  TrainingOptions opt;
  opt.epochs = 0;
  const auto m = train(full_view(g), tr, opt);
  EXPECT_EQ(m.weight, Eigen::MatrixXd::Zero(3, 2));
  EXPECT_EQ(m.bias, Eigen::RowVectorXd::Zero(2));
}

TEST(Train, EmptyTrainingSetThrows) {
  std::mt19937_64 rng(8);
  const auto g = oracle::random_graph(5, 0.3, 2, 2, rng);
  EXPECT_THROW(train(full_view(g), {}, {}), DomainError);
}

TEST(Train, SeparableDataIsFitAndLossDecreases) {
  // Two classes separated along the first feature; no edges so diffusion is the identity
  // up to the self-loop normalization.
  const std::size_t n = 200;
  std::mt19937_64 rng(9);
  std::normal_distribution<double> z(0.0, 0.3);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 2);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 2);
    x(static_cast<Eigen::Index>(i), 0) = (y[i] ? 2.0 : -2.0) + z(rng);
    x(static_cast<Eigen::Index>(i), 1) = z(rng);
  }
  const Graph g(n, {}, x, y);
  std::vector<NodeId> tr(n);
  std::iota(tr.begin(), tr.end(), NodeId{0});
  std::vector<double> losses;
  const auto m = train(full_view(g), tr, {}, &losses);
  ASSERT_EQ(losses.size(), 300u);
  for (std::size_t e = 10; e < losses.size(); e += 10) EXPECT_LE(losses[e], losses[e - 10] + 1e-6);
  const auto p = forward(m, full_view(g));
  int correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Index arg;
    p.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
    correct += arg == y[i];
  }
  EXPECT_GE(correct / static_cast<double>(n), 0.95);
}

TEST(Model, CalibrationScoresShiftAsTheGraphGrows) {
  Rng rng(10);
  const auto g = sbm_homophilous({}, rng);
  const auto s = node_sequence(g, {20, 20, 80}, rng);
  const auto m = train(view_at(s, g, s.t0_train), s.train_nodes, {});
  const ModelProbabilities src(m);
  const Scorer scorer{&src, {ScoreKind::tps, 0.5}, 1};
  const auto cal = CalibrationSet::from_nodes(g, s.calibration_nodes);
  const auto v0 = view_at(s, g, s.t0_cal), v1 = view_at(s, g, s.t0_cal + 200);
  const auto a = calibration_scores(cal, v0, scorer(v0)), b = calibration_scores(cal, v1, scorer(v1));
  double max_change = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) max_change = std::max(max_change, std::abs(a[i] - b[i]));
  EXPECT_GT(max_change, 1e-3);
}
