#include "bssl/numeric/optim.hpp"

#include "bssl/error.hpp"

#include <cmath>

namespace bssl {

void validate(const SgdConfig& cfg) {
  if (!(cfg.learning_rate > 0) || !std::isfinite(cfg.learning_rate)) {
    fail(ErrorKind::Config, "learning_rate must be positive");
  }
  if (!(cfg.weight_decay >= 0)) fail(ErrorKind::Config, "weight_decay must be nonnegative");
  if (!(cfg.momentum >= 0 && cfg.momentum < 1)) fail(ErrorKind::Config, "momentum must be in [0,1)");
}

void sgd_step(Model& model, const Vector& grad, const SgdConfig& cfg, SgdState& state) {
  Vector& theta = model.parameters();
  if (grad.size() != theta.size()) fail(ErrorKind::Shape, "gradient size does not match parameters");
  if (!grad.allFinite()) fail(ErrorKind::Divergence, "non-finite gradient");
  if (state.velocity.size() != theta.size()) state.velocity = Vector::Zero(theta.size());

  Vector velocity = cfg.momentum * state.velocity + grad;
  Vector next = theta - cfg.learning_rate * (velocity + cfg.weight_decay * theta);
  if (!next.allFinite()) fail(ErrorKind::Divergence, "parameters became non-finite");
  state.velocity = std::move(velocity);
  theta = std::move(next);
}

EmaState::EmaState(const Vector& theta, double decay_) : shadow(theta), decay(decay_) {
  if (!(decay >= 0 && decay <= 1)) fail(ErrorKind::Config, "ema decay must be in [0,1]");
}

void ema_update(EmaState& ema, const Vector& theta) {
  if (ema.shadow.size() != theta.size()) fail(ErrorKind::State, "EMA shadow shape mismatch");
  ema.shadow = ema.decay * ema.shadow + (1.0 - ema.decay) * theta;
}

Model ema_model(const Model& model, const EmaState& ema) {
  Model out = model;
  out.set_parameters(ema.shadow);
  return out;
}

}  // namespace bssl
