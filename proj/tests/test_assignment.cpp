#include "bssl/assignment/accuracy.hpp"
#include "bssl/assignment/assignment.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <limits>
#include <set>

namespace bssl {
namespace {

Matrix mat(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(Eigen::Index(rows.size()), Eigen::Index(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

TEST(Hungarian, ZeroDiagonal) {
  const auto a = hungarian_solve(mat({{0, 1}, {1, 0}}));
  EXPECT_EQ(a.map, (std::vector<int>{0, 1}));
  EXPECT_EQ(a.total_cost, 0.0);
}

TEST(Hungarian, TwoByTwo) {
  const auto a = hungarian_solve(mat({{1, 2}, {2, 1}}));
  EXPECT_EQ(a.map, (std::vector<int>{0, 1}));
  EXPECT_EQ(a.total_cost, 2.0);
}

TEST(Hungarian, AcceptsEigenExpressions) {
  Eigen::Matrix<float, 2, 3> m;
  m << 3, 1, 2, 1, 3, 3;
  const auto a = hungarian_solve(m);
  EXPECT_EQ(a.map, (std::vector<int>{1, 0}));
  EXPECT_DOUBLE_EQ(a.total_cost, 2.0);
}

TEST(Hungarian, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    for (auto [c, b] : {std::pair{5, 5}, std::pair{3, 6}}) {
      const Matrix cost = oracle::random_matrix(rng, c, b, 0, 10);
      const auto h = hungarian_solve(cost);
      const auto bf = brute_force_solve(cost);
      EXPECT_NEAR(h.total_cost, bf.total_cost, 1e-9);
      EXPECT_NEAR(h.total_cost, assignment_cost(cost, h.map), 1e-12);
    }
  }
}

TEST(Hungarian, NeverWorseThanAnyInjection) {
  std::mt19937_64 rng(7);
  for (int b = 1; b <= 7; ++b) {
    for (int c = 1; c <= b; ++c) {
      const Matrix cost = oracle::random_matrix(rng, c, b, 0, 3);
      const auto h = hungarian_solve(cost);
      for (const auto& [total, map] : oracle::enumerate_injections(cost)) {
        EXPECT_LE(h.total_cost, total + 1e-12);
      }
    }
  }
}

TEST(Hungarian, TiesResolveToLexicographicallySmallestMap) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const int b = 2 + trial % 6;
    const int c = 1 + trial % b;
    // Small integer range forces many exact ties.
    const Matrix cost = oracle::random_integer_matrix(rng, c, b, 2);
    const auto all = oracle::enumerate_injections(cost);
    const auto h = hungarian_solve(cost);
    EXPECT_EQ(h.total_cost, all.front().first);
    EXPECT_EQ(h.map, all.front().second) << "trial " << trial;
    EXPECT_EQ(brute_force_solve(cost).map, all.front().second);
  }
}

TEST(Hungarian, AllEqualCostsGiveIdentity) {
  const auto a = hungarian_solve(Matrix::Constant(5, 5, 0.7));
  EXPECT_EQ(a.map, (std::vector<int>{0, 1, 2, 3, 4}));
  const auto r = hungarian_solve(Matrix::Constant(3, 6, 2.0));
  EXPECT_EQ(r.map, (std::vector<int>{0, 1, 2}));
}

TEST(Hungarian, ConstantShiftKeepsArgmin) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix cost = oracle::random_matrix(rng, 4, 6, 0, 1);
    const auto base = hungarian_solve(cost);
    const auto shifted = hungarian_solve(Matrix(cost.array() + 3.5));
    EXPECT_EQ(base.map, shifted.map);
    EXPECT_NEAR(shifted.total_cost, base.total_cost + 4 * 3.5, 1e-12);
  }
}

TEST(Hungarian, LargerInstanceIsConsistent) {
  std::mt19937_64 rng(3);
  const Matrix cost = oracle::random_matrix(rng, 40, 64, 0, 4);
  const auto a = hungarian_solve(cost);
  std::set<int> cols(a.map.begin(), a.map.end());
  EXPECT_EQ(cols.size(), 40u);
  EXPECT_NEAR(a.total_cost, assignment_cost(cost, a.map), 1e-9);
}

TEST(Hungarian, RejectsBadInput) {
  try {
    hungarian_solve(Matrix::Zero(3, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
  Matrix bad = Matrix::Zero(2, 2);
  bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    hungarian_solve(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Input);
  }
}

TEST(BruteForce, TrivialCases) {
  EXPECT_EQ(brute_force_solve(mat({{4.0}})).map, (std::vector<int>{0}));
  EXPECT_EQ(brute_force_solve(mat({{1, 2}, {2, 1}})).total_cost, 2.0);
}

TEST(BruteForce, SizeGuard) {
  try {
    brute_force_solve(Matrix::Zero(2, 9));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SizeGuard);
  }
}

TEST(Murty, TwoPermutations) {
  const auto ranked = murty_kbest(mat({{1, 2}, {2, 1}}), 2);
  ASSERT_EQ(ranked.size(), 2u);
  EXPECT_EQ(ranked[0].total_cost, 2.0);
  EXPECT_EQ(ranked[1].total_cost, 4.0);
}

TEST(Murty, FirstEqualsHungarian) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix cost = oracle::random_integer_matrix(rng, 4, 5, 3);
    const auto ranked = murty_kbest(cost, 1);
    ASSERT_EQ(ranked.size(), 1u);
    EXPECT_EQ(ranked[0], hungarian_solve(cost));
  }
}

TEST(Murty, MatchesEnumeration) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    const bool square = trial % 2 == 0;
    const Matrix cost = oracle::random_matrix(rng, square ? 5 : 3, square ? 5 : 5, 0, 1);
    const auto all = oracle::enumerate_injections(cost);
    const auto ranked = murty_kbest(cost, 10);
    ASSERT_EQ(ranked.size(), 10u);
    std::set<std::vector<int>> seen;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      EXPECT_NEAR(ranked[i].total_cost, all[i].first, 1e-12);
      if (i > 0) EXPECT_GE(ranked[i].total_cost, ranked[i - 1].total_cost);
      EXPECT_TRUE(seen.insert(ranked[i].map).second);
    }
  }
}

TEST(Murty, ExhaustsSmallProblems) {
  std::mt19937_64 rng(6);
  const Matrix cost = oracle::random_integer_matrix(rng, 3, 3, 1);
  const auto ranked = murty_kbest(cost, 100);
  ASSERT_EQ(ranked.size(), 6u);
  std::set<std::vector<int>> maps;
  for (const auto& a : ranked) maps.insert(a.map);
  EXPECT_EQ(maps.size(), 6u);
  const auto rect = murty_kbest(oracle::random_matrix(rng, 2, 4, 0, 1), 1000);
  EXPECT_EQ(rect.size(), 12u);
}

TEST(Murty, ZeroKIsArgumentError) {
  try {
    murty_kbest(Matrix::Zero(2, 2), 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Argument);
  }
}

TEST(ClusteringAccuracy, IdentityPredictions) {
  const std::vector<int> y = {0, 1, 2, 2, 1, 0, 3};
  const auto s = clustering_accuracy(y, y, 4);
  EXPECT_EQ(s.accuracy, 1.0);
  EXPECT_EQ(s.best_perm, Permutation::identity(4));
}

TEST(ClusteringAccuracy, RelabeledPredictionsScorePerfectly) {
  const std::vector<int> truth = {0, 1, 2, 3, 0, 1, 2, 3, 3};
  const std::vector<int> sigma = {2, 0, 3, 1};
  std::vector<int> pred;
  for (int t : truth) pred.push_back(sigma[std::size_t(t)]);
  const auto s = clustering_accuracy(pred, truth, 4);
  EXPECT_EQ(s.accuracy, 1.0);
  // best_perm maps predicted cluster back to label: the inverse of sigma.
  EXPECT_EQ(s.best_perm, Permutation{sigma}.inverse());
  EXPECT_EQ(permuted_accuracy(pred, truth, s.best_perm), 1.0);
}

TEST(ClusteringAccuracy, AdversarialConfusionMatchesEnumeration) {
  const std::vector<int> pred = {0, 0, 0, 1, 1, 2, 3, 3};
  const std::vector<int> truth = {0, 1, 1, 1, 0, 2, 2, 3};
  const auto s = clustering_accuracy(pred, truth, 4);
  EXPECT_DOUBLE_EQ(s.accuracy, oracle::best_permutation_accuracy(pred, truth, 4));
  EXPECT_DOUBLE_EQ(s.accuracy, 5.0 / 8.0);
}

TEST(ClusteringAccuracy, RandomInstancesMatchEnumeration) {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> lab(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> pred(8), truth(8);
    for (int i = 0; i < 8; ++i) {
      pred[std::size_t(i)] = lab(rng);
      truth[std::size_t(i)] = lab(rng);
    }
    const auto s = clustering_accuracy(pred, truth, 4);
    EXPECT_DOUBLE_EQ(s.accuracy, oracle::best_permutation_accuracy(pred, truth, 4));
    EXPECT_GE(s.accuracy, classification_accuracy(pred, truth));
    EXPECT_TRUE(s.best_perm.is_bijection());
    EXPECT_DOUBLE_EQ(permuted_accuracy(pred, truth, s.best_perm), s.accuracy);

    // Relabeling predictions by a fixed bijection leaves the score unchanged.
    const std::vector<int> sigma = {3, 1, 0, 2};
    std::vector<int> relabeled;
    for (int p : pred) relabeled.push_back(sigma[std::size_t(p)]);
    EXPECT_DOUBLE_EQ(clustering_accuracy(relabeled, truth, 4).accuracy, s.accuracy);
  }
}

TEST(ClusteringAccuracy, OutOfRangeIdIsInputError) {
  const std::vector<int> pred = {0, 4};
  const std::vector<int> truth = {0, 1};
  try {
    clustering_accuracy(pred, truth, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Input);
  }
}

}  // namespace
}  // namespace bssl
