#pragma once

#include "bssl/assignment/assignment.hpp"

#include <span>
#include <vector>

namespace bssl {

struct ClusteringScore {
  double accuracy = 0;
  Permutation best_perm;  // predicted cluster -> label
};

/// K x K counts: confusion(p, t) = #{i : pred_i = p, truth_i = t}.
Matrix confusion_counts(std::span<const int> pred, std::span<const int> truth, int k);

/// Fraction of positions where pred == truth.
double classification_accuracy(std::span<const int> pred, std::span<const int> truth);

/// Accuracy under the best bijection from predicted clusters to labels,
/// found by hungarian_solve on the negated confusion counts.
ClusteringScore clustering_accuracy(std::span<const int> pred, std::span<const int> truth, int k);

/// Accuracy after relabeling every prediction p as perm(p).
double permuted_accuracy(std::span<const int> pred, std::span<const int> truth,
                         const Permutation& perm);

}  // namespace bssl
