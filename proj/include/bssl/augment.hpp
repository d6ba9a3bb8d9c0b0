#pragma once

#include "bssl/numeric/dense.hpp"
#include "bssl/shape.hpp"

#include <cstdint>
#include <span>

namespace bssl {

enum class AugmentKind { Weak, Strong, Cluster };

const char* to_string(AugmentKind kind);

struct AugmentParams {
  double flip_prob = 0.5;
  double max_translate_frac = 0.125;
  double jitter_strength = 0.2;  // brightness / contrast / per-pixel scale range (+-)
  double cutout_frac = 0.0;      // images: cutout area fraction; vectors: dropout probability
  double noise_sigma = 0.0;      // additive Gaussian noise
  int strong_ops = 2;            // random draws from {translate, brightness, contrast, noise}

  friend bool operator==(const AugmentParams&, const AugmentParams&) = default;
};

/// A stochastic augmentation g (weak / cluster) or q (strong).
///
/// Images:
///   weak    flip(p) then translate up to max_translate_frac with mirror padding
///   cluster per-pixel jitter, flip(p), mirror-padded translate
///   strong  `strong_ops` draws from {translate, brightness, contrast, noise}, then cutout
/// Vectors (no spatial structure, so these are additive-noise stand-ins):
///   weak / cluster  Gaussian noise
///   strong          Gaussian noise plus coordinate dropout with probability cutout_frac
struct AugmentSpec {
  AugmentKind kind = AugmentKind::Weak;
  DataShape shape;
  AugmentParams params;
  std::uint64_t rng_seed = 0;

  /// Defaults used by the trainer for each kind/shape.
  static AugmentSpec defaults(AugmentKind kind, const DataShape& shape);

  /// Every probability and magnitude set to zero.
  static AugmentSpec identity(AugmentKind kind, const DataShape& shape);

  void validate() const;
};

/// Applies the augmentation drawing randomness from `rng`. Output shape equals input.
Vector augment(const AugmentSpec& spec, std::span<const double> x, Rng& rng);

/// Same, seeded from spec.rng_seed only: identical inputs give identical bytes.
Vector augment(const AugmentSpec& spec, std::span<const double> x);

/// Row-wise augment over a batch.
Matrix augment_batch(const AugmentSpec& spec, const Matrix& x, Rng& rng);

// Image primitives over flattened CHW images.

Vector flip_horizontal(std::span<const double> x, const DataShape& shape);

/// Rotates a square image by `quarter_turns` x 90 degrees counter-clockwise.
Vector rotate90(std::span<const double> x, const DataShape& shape, int quarter_turns);

/// Shifts by (dy, dx) pixels, reading outside pixels from the mirror-reflected image.
Vector translate_mirror(std::span<const double> x, const DataShape& shape, int dy, int dx);

/// Fills a square of side `side` at (top, left) with `fill`, clipped to the image.
Vector cutout(std::span<const double> x, const DataShape& shape, int top, int left, int side,
              double fill);

}  // namespace bssl
