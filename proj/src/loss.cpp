#include "bssl/numeric/loss.hpp"

#include "bssl/error.hpp"

#include <string>

namespace bssl {

CrossEntropy softmax_cross_entropy(const Matrix& logits, std::span<const int> labels,
                                   double normalizer) {
  if (Eigen::Index(labels.size()) != logits.rows())
    fail(ErrorKind::Shape, "cross-entropy: " + std::to_string(labels.size()) + " labels for " +
                               std::to_string(logits.rows()) + " rows");
  for (int y : labels) {
    if (y < 0 || y >= logits.cols()) fail(ErrorKind::Input, "label " + std::to_string(y) + " out of range");
  }
  CrossEntropy out;
  if (logits.rows() == 0) {
    out.d_logits = logits;
    return out;
  }
  const double scale = 1.0 / (normalizer > 0 ? normalizer : double(logits.rows()));
  const Matrix logp = log_softmax_rows(logits);
  out.d_logits = logp.array().exp();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    out.loss -= logp(i, labels[std::size_t(i)]);
    out.d_logits(i, labels[std::size_t(i)]) -= 1;
  }
  out.loss *= scale;
  out.d_logits *= scale;
  return out;
}

}  // namespace bssl
