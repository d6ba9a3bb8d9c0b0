#pragma once

#include "bssl/numeric/dense.hpp"
#include "bssl/numeric/model.hpp"

namespace bssl {

struct SgdConfig {
  double learning_rate = 0.03;
  double weight_decay = 0.0005;
  double momentum = 0.9;
};

void validate(const SgdConfig& cfg);

/// Momentum buffer owned by one optimizer; lazily sized on first step.
struct SgdState {
  Vector velocity;
};

/// v <- momentum * v + grad;  theta <- theta - lr * (v + weight_decay * theta).
/// Weight decay is applied outside the momentum buffer. Throws Divergence on a
/// non-finite gradient before touching the parameters.
void sgd_step(Model& model, const Vector& grad, const SgdConfig& cfg, SgdState& state);

/// Shadow copy of the parameters, updated as a decayed running average.
struct EmaState {
  Vector shadow;
  double decay = 0.999;

  EmaState() = default;
  EmaState(const Vector& theta, double decay);
};

/// shadow <- decay * shadow + (1 - decay) * theta.
void ema_update(EmaState& ema, const Vector& theta);

/// Copy of `model` carrying the EMA weights.
Model ema_model(const Model& model, const EmaState& ema);

}  // namespace bssl
