#include "bssl/ssl.hpp"

#include "bssl/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace bssl {

void SslHyper::validate() const {
  if (!(tau >= 0 && tau <= 1)) fail(ErrorKind::Config, "ssl.tau must lie in [0, 1]");
  if (!(lambda_u >= 0)) fail(ErrorKind::Config, "ssl.lambda_u must be >= 0");
  if (mu < 1) fail(ErrorKind::Config, "ssl.mu must be >= 1");
  if (batch_size < 1) fail(ErrorKind::Config, "ssl.batch_size must be >= 1");
  if (!(temperature > 0)) fail(ErrorKind::Config, "ssl.temperature must be > 0");
  bssl::validate(sgd);
  weak.validate();
  strong.validate();
}

Matrix class_probabilities(const Matrix& cluster_out, double temperature) {
  return softmax_rows(cluster_out, temperature);
}

std::vector<PseudoLabel> pseudo_labels_from(const Matrix& probabilities) {
  std::vector<PseudoLabel> out;
  out.reserve(std::size_t(probabilities.rows()));
  for (Eigen::Index i = 0; i < probabilities.rows(); ++i) {
    Eigen::Index k = 0;
    const double conf = probabilities.row(i).maxCoeff(&k);
    out.push_back({int(k), conf});
  }
  return out;
}

std::vector<PseudoLabel> pseudo_label(const Model& model, const Matrix& u, const AugmentSpec& g,
                                      double temperature, Rng& rng, int threads) {
  const Matrix weak = augment_batch(g, u, rng);
  return pseudo_labels_from(class_probabilities(forward(model, weak, threads).cluster, temperature));
}

MaskedCrossEntropy masked_cross_entropy(const Matrix& strong_logits,
                                        const std::vector<PseudoLabel>& labels, double tau) {
  if (Eigen::Index(labels.size()) != strong_logits.rows())
    fail(ErrorKind::Shape, "one pseudo-label per unlabeled row required");
  MaskedCrossEntropy out;
  std::vector<Eigen::Index> rows;
  std::vector<int> classes;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i].confidence >= tau) {
      rows.push_back(Eigen::Index(i));
      classes.push_back(labels[i].class_id);
    }
  }
  out.confident = int(rows.size());
  out.ce.d_logits = Matrix::Zero(strong_logits.rows(), strong_logits.cols());
  if (rows.empty()) return out;
  Matrix picked(Eigen::Index(rows.size()), strong_logits.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) picked.row(Eigen::Index(i)) = strong_logits.row(rows[i]);
  const CrossEntropy ce = softmax_cross_entropy(picked, classes, double(rows.size()));
  out.ce.loss = ce.loss;
  for (std::size_t i = 0; i < rows.size(); ++i) out.ce.d_logits.row(rows[i]) = ce.d_logits.row(Eigen::Index(i));
  return out;
}

SslLoss unlabeled_loss(const Model& model, const Matrix& u, const SslHyper& hyper, Rng& rng) {
  SslLoss out;
  out.gradient = Vector::Zero(Eigen::Index(model.parameter_count()));
  if (u.rows() == 0) return out;
  // The weak branch only yields labels: nothing from it enters the tape.
  const auto labels = pseudo_label(model, u, hyper.weak, hyper.temperature, rng, hyper.threads);
  const Matrix strong = augment_batch(hyper.strong, u, rng);
  const Tape tape = forward_recorded(model, strong);
  const auto masked = masked_cross_entropy(tape.outputs.cluster / hyper.temperature, labels, hyper.tau);
  out.loss = masked.ce.loss;
  out.confident = masked.confident;
  if (masked.confident > 0)
    out.gradient = backward(model, tape, masked.ce.d_logits / hyper.temperature, Matrix());
  return out;
}

SslLoss labeled_loss(const Model& model, const Matrix& x, std::span<const int> y,
                     const SslHyper& hyper, Rng& rng) {
  if (Eigen::Index(y.size()) != x.rows()) fail(ErrorKind::Shape, "one label per labeled row required");
  for (int label : y) {
    if (label < 0 || label >= model.num_clusters())
      fail(ErrorKind::Input, "label " + std::to_string(label) + " out of range");
  }
  SslLoss out;
  out.gradient = Vector::Zero(Eigen::Index(model.parameter_count()));
  if (x.rows() == 0) return out;
  const Tape tape = forward_recorded(model, augment_batch(hyper.weak, x, rng));
  const CrossEntropy ce = softmax_cross_entropy(tape.outputs.cluster / hyper.temperature, y);
  out.loss = ce.loss;
  out.gradient = backward(model, tape, ce.d_logits / hyper.temperature, Matrix());
  return out;
}

namespace {

void guard(double loss, const char* what) {
  if (!std::isfinite(loss) || loss > kDivergenceLimit)
    fail(ErrorKind::Divergence, std::string(what) + " diverged (" + std::to_string(loss) + ")");
}

}  // namespace

SslStepStats ssl_step(PhaseState state, const Matrix& x, std::span<const int> y, const Matrix& u,
                      const SslHyper& hyper) {
  SslStepStats stats;
  const SslLoss ls = labeled_loss(state.model, x, y, hyper, state.rng);
  Vector grad = ls.gradient;
  stats.loss_s = ls.loss;
  stats.unlabeled = int(u.rows());
  if (hyper.lambda_u > 0) {
    const SslLoss lu = unlabeled_loss(state.model, u, hyper, state.rng);
    stats.loss_u = lu.loss;
    stats.confident = lu.confident;
    grad += hyper.lambda_u * lu.gradient;
  }
  stats.total = stats.loss_s + hyper.lambda_u * stats.loss_u;
  guard(stats.total, "semi-supervised loss");
  sgd_step(state.model, grad, hyper.sgd, state.sgd);
  if (state.ema) ema_update(*state.ema, state.model.parameters());
  return stats;
}

FixMatchPhase::FixMatchPhase(SslHyper hyper) : hyper_(std::move(hyper)) {}

SslEpochStats FixMatchPhase::run_epoch(PhaseState state, const Dataset& data,
                                       std::span<const int> labeled, std::span<const int> unlabeled,
                                       const BatchObserver& observer) {
  if (labeled.empty()) fail(ErrorKind::Config, "semi-supervised phase needs labeled data");
  SslEpochStats stats;
  const int ub = hyper_.unlabeled_batch();
  const auto u_batches = make_batches(int(unlabeled.size()), ub, true, state.rng);
  const int steps = std::max<int>(1, int(u_batches.size()));

  std::vector<int> cycle;
  std::size_t cursor = 0;
  int confident = 0, seen = 0;
  double sum_s = 0, sum_u = 0;
  for (int step = 0; step < steps; ++step) {
    std::vector<int> x_rows;
    while (int(x_rows.size()) < hyper_.batch_size) {
      if (cursor == cycle.size()) {
        cycle.assign(labeled.begin(), labeled.end());
        std::shuffle(cycle.begin(), cycle.end(), state.rng);
        cursor = 0;
      }
      x_rows.push_back(cycle[cursor++]);
    }
    std::vector<int> u_rows;
    if (!u_batches.empty()) {
      for (int p : u_batches[std::size_t(step)]) u_rows.push_back(unlabeled[std::size_t(p)]);
    }
    if (observer) {
      observer(Phase::Ssl, x_rows);
      observer(Phase::Ssl, u_rows);
    }
    const SslStepStats s = ssl_step(state, data.rows(x_rows), data.labels_of(x_rows), data.rows(u_rows), hyper_);
    sum_s += s.loss_s;
    sum_u += s.loss_u;
    confident += s.confident;
    seen += s.unlabeled;
    ++stats.steps;
  }
  stats.loss_s = sum_s / stats.steps;
  stats.loss_u = sum_u / stats.steps;
  stats.mask_rate = seen ? double(confident) / seen : 0.0;
  return stats;
}

}  // namespace bssl
