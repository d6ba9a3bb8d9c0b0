#include "bssl/assignment/accuracy.hpp"

namespace bssl {

namespace {

void check_labels(std::span<const int> pred, std::span<const int> truth, int k) {
  if (pred.size() != truth.size()) fail(ErrorKind::Input, "prediction and label counts differ");
  if (pred.empty()) fail(ErrorKind::Input, "accuracy of an empty set is undefined");
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || pred[i] >= k || truth[i] < 0 || truth[i] >= k) {
      fail(ErrorKind::Input, "cluster or label id out of range at position " + std::to_string(i));
    }
  }
}

}  // namespace

Matrix confusion_counts(std::span<const int> pred, std::span<const int> truth, int k) {
  check_labels(pred, truth, k);
  Matrix counts = Matrix::Zero(k, k);
  for (std::size_t i = 0; i < pred.size(); ++i) counts(pred[i], truth[i]) += 1;
  return counts;
}

double classification_accuracy(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    fail(ErrorKind::Input, "accuracy needs equally sized, non-empty inputs");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return double(hits) / double(pred.size());
}

ClusteringScore clustering_accuracy(std::span<const int> pred, std::span<const int> truth, int k) {
  const Matrix counts = confusion_counts(pred, truth, k);
  const Assignment best = hungarian_solve(Matrix(-counts));
  ClusteringScore out;
  out.best_perm.perm = best.map;
  out.accuracy = -best.total_cost / double(pred.size());
  return out;
}

double permuted_accuracy(std::span<const int> pred, std::span<const int> truth,
                         const Permutation& perm) {
  if (pred.size() != truth.size() || pred.empty()) {
    fail(ErrorKind::Input, "accuracy needs equally sized, non-empty inputs");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += perm(pred[i]) == truth[i];
  return double(hits) / double(pred.size());
}

}  // namespace bssl
