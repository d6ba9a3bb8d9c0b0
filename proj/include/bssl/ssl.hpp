#pragma once

#include "bssl/augment.hpp"
#include "bssl/clustering.hpp"
#include "bssl/data.hpp"
#include "bssl/numeric/loss.hpp"
#include "bssl/numeric/model.hpp"
#include "bssl/numeric/optim.hpp"

#include <memory>
#include <span>
#include <vector>

namespace bssl {

struct SslHyper {
  double tau = 0.95;         // confidence threshold
  double lambda_u = 1.0;     // unlabeled loss weight
  int mu = 7;                // unlabeled batch = mu * batch_size
  int batch_size = 64;       // labeled batch
  double temperature = 0.1;  // softmax temperature over the unit-norm head
  SgdConfig sgd{0.03, 0.0005, 0.9};
  AugmentSpec weak;
  AugmentSpec strong;
  int threads = 1;

  int unlabeled_batch() const { return mu * batch_size; }
  void validate() const;
};

/// Class distribution from unit-norm head outputs: softmax(f / temperature).
Matrix class_probabilities(const Matrix& cluster_out, double temperature);

struct PseudoLabel {
  int class_id = 0;
  double confidence = 0;

  friend bool operator==(const PseudoLabel&, const PseudoLabel&) = default;
};

/// argmax / max of each probability row.
std::vector<PseudoLabel> pseudo_labels_from(const Matrix& probabilities);

/// Pseudo-labels of the model on g(u), one per row of `u`. No gradient is recorded.
std::vector<PseudoLabel> pseudo_label(const Model& model, const Matrix& u, const AugmentSpec& g,
                                      double temperature, Rng& rng, int threads = 1);

/// sum_i 1(conf_i >= tau) H(softmax(strong_logits_i), class_i) / max(1, #confident),
/// with its gradient w.r.t. strong_logits.
struct MaskedCrossEntropy {
  CrossEntropy ce;
  int confident = 0;
};
MaskedCrossEntropy masked_cross_entropy(const Matrix& strong_logits,
                                        const std::vector<PseudoLabel>& labels, double tau);

struct SslLoss {
  double loss = 0;
  Vector gradient;
  int confident = 0;
};

/// L_u on an unlabeled batch: pseudo-labels from the weak view, cross-entropy on the strong.
SslLoss unlabeled_loss(const Model& model, const Matrix& u, const SslHyper& hyper, Rng& rng);

/// L_s: mean cross-entropy on the weakly augmented labeled batch.
SslLoss labeled_loss(const Model& model, const Matrix& x, std::span<const int> y,
                     const SslHyper& hyper, Rng& rng);

struct SslStepStats {
  double loss_s = 0;
  double loss_u = 0;
  double total = 0;
  int confident = 0;
  int unlabeled = 0;
};

/// One SGD step on L_s + lambda_u * L_u (EMA updated when present).
SslStepStats ssl_step(PhaseState state, const Matrix& x, std::span<const int> y, const Matrix& u,
                      const SslHyper& hyper);

struct SslEpochStats {
  double loss_s = 0;     // mean over steps
  double loss_u = 0;     // mean over steps
  double mask_rate = 0;  // confident / unlabeled images seen
  int steps = 0;
};

/// Semi-supervised phase behind a narrow interface so other methods can be plugged in.
class SslPhase {
 public:
  virtual ~SslPhase() = default;
  virtual SslEpochStats run_epoch(PhaseState state, const Dataset& data,
                                  std::span<const int> labeled, std::span<const int> unlabeled,
                                  const BatchObserver& observer) = 0;
};

/// Thresholded pseudo-label consistency. An epoch is ceil(|U| / (mu*b)) steps; labeled
/// batches cycle through reshuffled passes of the labeled set.
class FixMatchPhase final : public SslPhase {
 public:
  explicit FixMatchPhase(SslHyper hyper);

  SslEpochStats run_epoch(PhaseState state, const Dataset& data, std::span<const int> labeled,
                          std::span<const int> unlabeled, const BatchObserver& observer) override;

  const SslHyper& hyper() const { return hyper_; }

 private:
  SslHyper hyper_;
};

}  // namespace bssl
