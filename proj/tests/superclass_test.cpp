#include "vmoe/superclass.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "vmoe/errors.hpp"
#include "vmoe/log.hpp"

namespace vmoe {
namespace {

ConfusionGraph graph_from_edges(int c, std::initializer_list<std::tuple<int, int, double>> edges) {
  ConfusionGraph g{Eigen::MatrixXd::Zero(c, c)};
  for (auto [a, b, w] : edges) {
    g.weights(a, b) = w;
    g.weights(b, a) = w;
  }
  return g;
}

testing::Mat to_rows(const Eigen::MatrixXd& m) {
  testing::Mat out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

ConfusionGraph random_graph(int c, std::mt19937_64& rng, double density = 0.6) {
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> counts(1, 40);
  ConfusionGraph g{Eigen::MatrixXd::Zero(c, c)};
  for (int a = 0; a < c; ++a)
    for (int b = a + 1; b < c; ++b)
      if (u(rng) < density) g.weights(a, b) = g.weights(b, a) = counts(rng);
  return g;
}

// Keeps warnings out of stderr and lets tests inspect them.
class WarningCapture {
 public:
  WarningCapture() : old_(set_warning_sink([this](const std::string& m) { messages.push_back(m); })) {}
  ~WarningCapture() { set_warning_sink(old_); }
  std::vector<std::string> messages;

 private:
  LogSink old_;
};

TEST(Confusion, PerfectClassifierIsDiagonal) {
  std::vector<int> truth{0, 1, 2, 2, 1, 0, 3};
  auto cm = confusion_from_predictions(4, truth, truth);
  EXPECT_EQ(cm.counts, CountMatrix(cm.counts.diagonal().asDiagonal()));
  EXPECT_EQ(cm.counts(2, 2), 2);
}

TEST(Confusion, ConstantPredictorFillsColumnZero) {
  std::vector<int> truth{0, 1, 2, 3, 3, 1};
  std::vector<int> pred(truth.size(), 0);
  auto cm = confusion_from_predictions(4, truth, pred);
  EXPECT_EQ(cm.counts.col(0).sum(), 6);
  EXPECT_EQ(cm.counts.rightCols(3).sum(), 0);
  EXPECT_EQ(cm.counts(3, 0), 2);
}

TEST(Confusion, TotalAndRowSumsConserveCounts) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> cls(0, 6);
  std::vector<int> truth(500), pred(500);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    truth[i] = cls(rng);
    pred[i] = cls(rng);
  }
  auto cm = confusion_from_predictions(7, truth, pred);
  EXPECT_EQ(cm.total(), 500);
  for (int c = 0; c < 7; ++c) EXPECT_EQ(cm.counts.row(c).sum(), std::count(truth.begin(), truth.end(), c));
}

TEST(Confusion, RejectsEmptyAndOutOfRange) {
  std::vector<int> none;
  EXPECT_THROW(confusion_from_predictions(3, none, none), ContractError);
  std::vector<int> truth{0, 3}, pred{0, 1};
  EXPECT_THROW(confusion_from_predictions(3, truth, pred), DataError);
}

TEST(Graph, DiagonalConfusionGivesZeroGraph) {
  ConfusionMatrix cm{CountMatrix::Zero(4, 4)};
  cm.counts.diagonal() << 5, 3, 7, 1;
  EXPECT_TRUE(build_graph(cm).weights.isZero());
}

TEST(Graph, Symmetrizes) {
  ConfusionMatrix cm{CountMatrix::Zero(3, 3)};
  cm.counts(1, 2) = 3;
  cm.counts(2, 1) = 5;
  cm.counts(1, 1) = 9;
  auto g = build_graph(cm);
  EXPECT_EQ(g.weights(1, 2), 8);
  EXPECT_EQ(g.weights(2, 1), 8);
  EXPECT_EQ(g.weights(1, 1), 0);
}

TEST(Graph, TotalIsTwiceOffDiagonalMass) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> d(0, 20);
  ConfusionMatrix cm{CountMatrix::Zero(6, 6)};
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) cm.counts(i, j) = d(rng);
  const long long off = cm.total() - cm.counts.diagonal().sum();
  auto g = build_graph(cm);
  EXPECT_EQ(g.weights.sum(), 2.0 * static_cast<double>(off));
  EXPECT_TRUE(g.weights.isApprox(g.weights.transpose()));
}

TEST(Cluster, FourNodeExample) {
  auto g = graph_from_edges(4, {{0, 1, 10}, {2, 3, 10}, {0, 2, 1}});
  for (int exact : {10, 0}) {
    auto m = cluster_graph(g, 2, {.exact_search_max_classes = exact});
    EXPECT_EQ(m.assignment, (std::vector<int>{0, 0, 1, 1})) << "exact limit " << exact;
    EXPECT_DOUBLE_EQ(intra_cluster_weight(g, m), testing::brute_force_best_partition(to_rows(g.weights), 2, 4));
  }
}

TEST(Cluster, RecoversDisconnectedBlocks) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> w(1, 30);
  for (auto [blocks, size] : std::vector<std::pair<int, int>>{{2, 4}, {4, 2}, {2, 3}, {3, 2}}) {
    const int c = blocks * size;
    // Interleave block membership so recovery does not follow index order.
    std::vector<int> block_of(static_cast<std::size_t>(c));
    for (int i = 0; i < c; ++i) block_of[static_cast<std::size_t>(i)] = i % blocks;
    ConfusionGraph g{Eigen::MatrixXd::Zero(c, c)};
    for (int a = 0; a < c; ++a)
      for (int b = a + 1; b < c; ++b)
        if (block_of[a] == block_of[b]) g.weights(a, b) = g.weights(b, a) = w(rng);
    for (int exact : {10, 0}) {
      auto m = cluster_graph(g, blocks, {.exact_search_max_classes = exact});
      for (int a = 0; a < c; ++a)
        for (int b = 0; b < c; ++b) EXPECT_EQ(m[a] == m[b], block_of[a] == block_of[b]);
      EXPECT_DOUBLE_EQ(intra_cluster_weight(g, m),
                       testing::brute_force_best_partition(to_rows(g.weights), blocks, default_balance_cap(c, blocks)));
    }
  }
}

TEST(Cluster, MatchesBruteForceOnRandomSmallGraphs) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const int c = 3 + trial % 6;  // 3..8
    const int e = 1 + static_cast<int>(rng() % static_cast<unsigned>(std::min(c, 4)));
    auto g = random_graph(c, rng);
    if (g.weights.isZero()) continue;
    auto m = cluster_graph(g, e);
    validate(m, default_balance_cap(c, e));
    EXPECT_NEAR(intra_cluster_weight(g, m),
                testing::brute_force_best_partition(to_rows(g.weights), e, default_balance_cap(c, e)), 1e-9)
        << "trial " << trial << " C=" << c << " E=" << e;
  }
}

TEST(Cluster, GreedyPathNeverWorseThanRoundRobin) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    const int c = 12 + trial;
    const int e = 2 + trial % 7;
    auto g = random_graph(c, rng, 0.3);
    auto m = cluster_graph(g, e);
    validate(m, default_balance_cap(c, e));
    EXPECT_GE(intra_cluster_weight(g, m), intra_cluster_weight(g, round_robin_superclasses(c, e)));
    EXPECT_EQ(m.sizes().size(), static_cast<std::size_t>(e));
  }
}

TEST(Cluster, RespectsExplicitCap) {
  // One heavy clique of five would absorb everything without a cap.
  ConfusionGraph g{Eigen::MatrixXd::Constant(6, 6, 1.0)};
  g.weights.topLeftCorner(5, 5).setConstant(50);
  g.weights.diagonal().setZero();
  for (int exact : {10, 0}) {
    auto m = cluster_graph(g, 2, {.max_cluster_size = 3, .exact_search_max_classes = exact});
    auto sizes = m.sizes();
    EXPECT_EQ(sizes, (std::vector<int>{3, 3}));
  }
}

TEST(Cluster, CanonicalAndDeterministic) {
  std::mt19937_64 rng(8);
  auto g = random_graph(20, rng, 0.4);
  auto a = cluster_graph(g, 4);
  auto b = cluster_graph(g, 4);
  EXPECT_EQ(a.assignment, b.assignment);
  EXPECT_EQ(a[0], 0);
  int seen = 0;
  for (int s : a.assignment) {
    EXPECT_LE(s, seen);
    seen = std::max(seen, s + 1);
  }
}

TEST(Cluster, ZeroGraphFallsBackToRoundRobinWithWarning) {
  WarningCapture capture;
  ConfusionGraph g{Eigen::MatrixXd::Zero(7, 7)};
  auto m = cluster_graph(g, 3);
  EXPECT_EQ(m.assignment, round_robin_superclasses(7, 3).assignment);
  ASSERT_EQ(capture.messages.size(), 1u);
  EXPECT_NE(capture.messages[0].find("round-robin"), std::string::npos);
}

TEST(Cluster, RejectsMoreSuperClassesThanClasses) {
  ConfusionGraph g{Eigen::MatrixXd::Ones(3, 3)};
  EXPECT_THROW(cluster_graph(g, 4), ConfigError);
  EXPECT_THROW(cluster_graph(g, 0), ConfigError);
}

TEST(RandomSplit, SameSeedSameMap) {
  EXPECT_EQ(random_superclasses(100, 10, 7).assignment, random_superclasses(100, 10, 7).assignment);
  EXPECT_NE(random_superclasses(100, 10, 7).assignment, random_superclasses(100, 10, 8).assignment);
}

TEST(RandomSplit, TenIntoFiveGivesPairs) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto m = random_superclasses(10, 5, seed);
    EXPECT_EQ(m.sizes(), std::vector<int>(5, 2));
  }
}

TEST(RandomSplit, SizesDifferByAtMostOne) {
  auto sizes = random_superclasses(23, 5, 1).sizes();
  auto [lo, hi] = std::minmax_element(sizes.begin(), sizes.end());
  EXPECT_LE(*hi - *lo, 1);
}

TEST(Provided, TwentyCoarseOfFive) {
  // CIFAR-100 shape: 100 fine classes, 20 coarse groups of five.
  std::vector<int> fine, coarse;
  std::mt19937_64 rng(4);
  std::vector<int> perm(100);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  for (int rep = 0; rep < 3; ++rep)
    for (int f = 0; f < 100; ++f) {
      fine.push_back(f);
      coarse.push_back(perm[static_cast<std::size_t>(f)] / 5);
    }
  auto m = provided_superclasses(fine, coarse);
  EXPECT_EQ(m.num_superclasses, 20);
  EXPECT_EQ(m.sizes(), std::vector<int>(20, 5));
  for (int f = 0; f < 100; ++f) EXPECT_EQ(m[f], perm[static_cast<std::size_t>(f)] / 5);
}

TEST(Provided, InconsistentMappingIsDataError) {
  std::vector<int> fine{0, 1, 0}, coarse{0, 1, 1};
  EXPECT_THROW(provided_superclasses(fine, coarse), DataError);
}

TEST(MapFile, RoundTrips) {
  auto path = std::filesystem::temp_directory_path() / "vmoe_superclass_map_test.txt";
  auto m = random_superclasses(17, 4, 3);
  write_superclass_map(m, path);
  auto back = read_superclass_map(path);
  EXPECT_EQ(back.assignment, m.assignment);
  EXPECT_EQ(back.num_superclasses, 4);
  std::filesystem::remove(path);
}

TEST(MapFile, RejectsMalformedLines) {
  auto path = std::filesystem::temp_directory_path() / "vmoe_superclass_bad.txt";
  {
    std::ofstream out(path);
    out << "0 1\n1 zero\n";
  }
  EXPECT_THROW(read_superclass_map(path), FormatError);
  {
    std::ofstream out(path);
    out << "0 0\n2 1\n";
  }
  EXPECT_THROW(read_superclass_map(path), FormatError);
  std::filesystem::remove(path);
}

TEST(Validate, CatchesEmptyAndOversized) {
  EXPECT_THROW(validate(SuperClassMap{{0, 0, 2}, 3}), ConfigError);
  EXPECT_THROW(validate(SuperClassMap{{0, 0, 0, 1}, 2}, 2), ConfigError);
  EXPECT_NO_THROW(validate(SuperClassMap{{0, 1, 0, 1}, 2}, 2));
}

TEST(Describe, ListsMembersByName) {
  std::vector<std::string> names{"cat", "dog", "car", "truck"};
  EXPECT_EQ(describe(SuperClassMap{{0, 0, 1, 1}, 2}, names), "0: cat dog\n1: car truck\n");
}

}  // namespace
}  // namespace vmoe
