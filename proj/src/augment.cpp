#include "bssl/augment.hpp"

#include "bssl/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bssl {

const char* to_string(AugmentKind kind) {
  switch (kind) {
    case AugmentKind::Weak: return "weak";
    case AugmentKind::Strong: return "strong";
    case AugmentKind::Cluster: return "cluster";
  }
  return "?";
}

AugmentSpec AugmentSpec::defaults(AugmentKind kind, const DataShape& shape) {
  AugmentSpec spec;
  spec.kind = kind;
  spec.shape = shape;
  AugmentParams& p = spec.params;
  if (shape.is_image()) {
    p.flip_prob = kind == AugmentKind::Strong ? 0.0 : 0.5;
    p.max_translate_frac = 0.125;
    p.jitter_strength = kind == AugmentKind::Weak ? 0.0 : 0.2;
    p.cutout_frac = kind == AugmentKind::Strong ? 0.25 : 0.0;
    p.noise_sigma = kind == AugmentKind::Strong ? 0.05 : 0.0;
  } else {
    p.flip_prob = 0;
    p.max_translate_frac = 0;
    p.jitter_strength = 0;
    p.cutout_frac = kind == AugmentKind::Strong ? 0.1 : 0.0;
    p.noise_sigma = kind == AugmentKind::Strong ? 0.5 : 0.1;
  }
  return spec;
}

AugmentSpec AugmentSpec::identity(AugmentKind kind, const DataShape& shape) {
  AugmentSpec spec;
  spec.kind = kind;
  spec.shape = shape;
  spec.params = AugmentParams{0, 0, 0, 0, 0, 0};
  return spec;
}

void AugmentSpec::validate() const {
  const auto unit = [](double v, const char* name) {
    if (!(v >= 0 && v <= 1)) fail(ErrorKind::Config, std::string("augment.") + name + " must lie in [0,1]");
  };
  unit(params.flip_prob, "flip_prob");
  unit(params.max_translate_frac, "max_translate_frac");
  unit(params.jitter_strength, "jitter_strength");
  unit(params.cutout_frac, "cutout_frac");
  if (!(params.noise_sigma >= 0) || !std::isfinite(params.noise_sigma))
    fail(ErrorKind::Config, "augment.noise_sigma must be a finite value >= 0");
  if (params.strong_ops < 0) fail(ErrorKind::Config, "augment.strong_ops must be >= 0");
  if (shape.size() <= 0) fail(ErrorKind::Config, "augment shape is empty");
}

namespace {

void check_size(std::span<const double> x, const DataShape& shape) {
  if (std::ptrdiff_t(x.size()) != shape.size())
    fail(ErrorKind::Input, "augment input has " + std::to_string(x.size()) +
                               " values, expected " + shape.describe());
}

void check_image(std::span<const double> x, const DataShape& shape) {
  if (!shape.is_image()) fail(ErrorKind::Input, "image operation on " + shape.describe());
  check_size(x, shape);
}

// Reflect without repeating the edge pixel: -1 -> 1, n -> n-2.
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

Vector to_vector(std::span<const double> x) {
  return Eigen::Map<const Vector>(x.data(), Eigen::Index(x.size()));
}

bool coin(Rng& rng, double p) {
  if (p <= 0) return false;
  if (p >= 1) return true;
  return std::uniform_real_distribution<double>(0, 1)(rng) < p;
}

double symmetric(Rng& rng, double magnitude) {
  return std::uniform_real_distribution<double>(-magnitude, magnitude)(rng);
}

void add_noise(Vector& v, double sigma, Rng& rng) {
  if (sigma <= 0) return;
  std::normal_distribution<double> n(0, sigma);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] += n(rng);
}

Vector random_translate(const Vector& v, const DataShape& shape, double frac, Rng& rng) {
  const int max_dy = int(std::floor(frac * shape.height));
  const int max_dx = int(std::floor(frac * shape.width));
  if (max_dy == 0 && max_dx == 0) return v;
  const int dy = std::uniform_int_distribution<int>(-max_dy, max_dy)(rng);
  const int dx = std::uniform_int_distribution<int>(-max_dx, max_dx)(rng);
  return translate_mirror(as_span(v), shape, dy, dx);
}

void brightness(Vector& v, double strength, Rng& rng) {
  if (strength <= 0) return;
  v *= 1 + symmetric(rng, strength);
}

void contrast(Vector& v, const DataShape& shape, double strength, Rng& rng) {
  if (strength <= 0) return;
  const double scale = 1 + symmetric(rng, strength);
  const Eigen::Index plane = Eigen::Index(shape.height) * shape.width;
  for (int c = 0; c < shape.channels; ++c) {
    auto ch = v.segment(c * plane, plane);
    const double mean = ch.mean();
    ch = (ch.array() - mean) * scale + mean;
  }
}

Vector augment_image(const AugmentSpec& spec, Vector v, Rng& rng) {
  const AugmentParams& p = spec.params;
  const DataShape& shape = spec.shape;
  switch (spec.kind) {
    case AugmentKind::Weak:
      if (coin(rng, p.flip_prob)) v = flip_horizontal(as_span(v), shape);
      return random_translate(v, shape, p.max_translate_frac, rng);
    case AugmentKind::Cluster:
      if (p.jitter_strength > 0) {
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] *= 1 + symmetric(rng, p.jitter_strength);
      }
      if (coin(rng, p.flip_prob)) v = flip_horizontal(as_span(v), shape);
      return random_translate(v, shape, p.max_translate_frac, rng);
    case AugmentKind::Strong: {
      if (coin(rng, p.flip_prob)) v = flip_horizontal(as_span(v), shape);
      for (int op = 0; op < p.strong_ops; ++op) {
        switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
          case 0: v = random_translate(v, shape, p.max_translate_frac, rng); break;
          case 1: brightness(v, p.jitter_strength, rng); break;
          case 2: contrast(v, shape, p.jitter_strength, rng); break;
          default: add_noise(v, p.noise_sigma, rng); break;
        }
      }
      const int side = int(std::lround(std::sqrt(p.cutout_frac) * shape.width));
      if (side > 0) {
        const int top = std::uniform_int_distribution<int>(0, std::max(0, shape.height - side))(rng);
        const int left = std::uniform_int_distribution<int>(0, std::max(0, shape.width - side))(rng);
        v = cutout(as_span(v), shape, top, left, side, 0.5);
      }
      return v;
    }
  }
  return v;
}

Vector augment_vector(const AugmentSpec& spec, Vector v, Rng& rng) {
  add_noise(v, spec.params.noise_sigma, rng);
  if (spec.kind == AugmentKind::Strong && spec.params.cutout_frac > 0) {
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (coin(rng, spec.params.cutout_frac)) v[i] = 0;
    }
  }
  return v;
}

}  // namespace

Vector augment(const AugmentSpec& spec, std::span<const double> x, Rng& rng) {
  check_size(x, spec.shape);
  Vector v = to_vector(x);
  return spec.shape.is_image() ? augment_image(spec, std::move(v), rng)
                               : augment_vector(spec, std::move(v), rng);
}

Vector augment(const AugmentSpec& spec, std::span<const double> x) {
  Rng rng(spec.rng_seed);
  return augment(spec, x, rng);
}

Matrix augment_batch(const AugmentSpec& spec, const Matrix& x, Rng& rng) {
  if (x.cols() != spec.shape.size())
    fail(ErrorKind::Input, "augment batch has " + std::to_string(x.cols()) +
                               " columns, expected " + spec.shape.describe());
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out.row(i) = augment(spec, std::span<const double>(x.row(i).data(), std::size_t(x.cols())), rng)
                     .transpose();
  }
  return out;
}

Vector flip_horizontal(std::span<const double> x, const DataShape& shape) {
  check_image(x, shape);
  Vector out(Eigen::Index(x.size()));
  const int h = shape.height, w = shape.width;
  for (int c = 0; c < shape.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int col = 0; col < w; ++col)
        out[(c * h + y) * w + col] = x[std::size_t((c * h + y) * w + (w - 1 - col))];
  return out;
}

Vector rotate90(std::span<const double> x, const DataShape& shape, int quarter_turns) {
  check_image(x, shape);
  if (!shape.is_square_image()) fail(ErrorKind::Unsupported, "rotation needs a square image, got " + shape.describe());
  const int n = shape.height;
  const int turns = ((quarter_turns % 4) + 4) % 4;
  Vector cur = to_vector(x);
  for (int t = 0; t < turns; ++t) {
    Vector next(cur.size());
    // Counter-clockwise: out(y, x) = in(x, n-1-y).
    for (int c = 0; c < shape.channels; ++c)
      for (int y = 0; y < n; ++y)
        for (int col = 0; col < n; ++col)
          next[(c * n + y) * n + col] = cur[(c * n + col) * n + (n - 1 - y)];
    cur = std::move(next);
  }
  return cur;
}

Vector translate_mirror(std::span<const double> x, const DataShape& shape, int dy, int dx) {
  check_image(x, shape);
  Vector out(Eigen::Index(x.size()));
  const int h = shape.height, w = shape.width;
  for (int c = 0; c < shape.channels; ++c)
    for (int y = 0; y < h; ++y)
      for (int col = 0; col < w; ++col)
        out[(c * h + y) * w + col] =
            x[std::size_t((c * h + reflect(y + dy, h)) * w + reflect(col + dx, w))];
  return out;
}

Vector cutout(std::span<const double> x, const DataShape& shape, int top, int left, int side,
              double fill) {
  check_image(x, shape);
  Vector out = to_vector(x);
  const int h = shape.height, w = shape.width;
  const int y0 = std::max(0, top), y1 = std::min(h, top + side);
  const int x0 = std::max(0, left), x1 = std::min(w, left + side);
  for (int c = 0; c < shape.channels; ++c)
    for (int y = y0; y < y1; ++y)
      for (int col = x0; col < x1; ++col) out[(c * h + y) * w + col] = fill;
  return out;
}

}  // namespace bssl
