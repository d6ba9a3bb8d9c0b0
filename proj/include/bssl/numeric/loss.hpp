#pragma once

#include "bssl/numeric/dense.hpp"

#include <span>

namespace bssl {

struct CrossEntropy {
  double loss = 0;
  Matrix d_logits;  // gradient of `loss` w.r.t. the logits
};

/// sum_i -log softmax(logits_i)[labels_i] / normalizer.
/// The default normalizer (0) means the row count.
CrossEntropy softmax_cross_entropy(const Matrix& logits, std::span<const int> labels,
                                   double normalizer = 0);

}  // namespace bssl
