#include "bssl/verify.hpp"

#include "bssl/assignment/assignment.hpp"
#include "bssl/numeric/loss.hpp"
#include "bssl/numeric/model.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace bssl {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Matrix random_costs(Rng& rng, int rows, int cols, bool integer) {
  Matrix m(rows, cols);
  std::uniform_real_distribution<double> real(-5, 5);
  std::uniform_int_distribution<int> small(0, 4);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = integer ? small(rng) : real(rng);
  return m;
}

CheckResult check_hungarian(Rng& rng, bool corrupt) {
  CheckResult r{"hungarian == brute force", 0, 0, 0, 1e-9, 0};
  const auto start = Clock::now();
  std::uniform_int_distribution<int> dim(1, 7);
  for (int trial = 0; trial < 1000; ++trial) {
    const int c = dim(rng);
    const int b = std::uniform_int_distribution<int>(c, 7)(rng);
    const Matrix cost = random_costs(rng, c, b, trial % 2 == 0);
    Matrix fed = cost;
    if (corrupt) fed(0, 0) += 10;
    const Assignment fast = hungarian_solve(fed);
    const Assignment slow = brute_force_solve(cost);
    const double delta = std::abs(assignment_cost(cost, fast.map) - slow.total_cost);
    r.worst = std::max(r.worst, delta);
    ++r.cases;
    if (!(delta < r.tolerance)) ++r.failures;
  }
  r.seconds = elapsed(start);
  return r;
}

CheckResult check_murty(Rng& rng) {
  CheckResult r{"murty k=10 == enumeration", 0, 0, 0, 1e-9, 0};
  const auto start = Clock::now();
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix cost = random_costs(rng, 5, 5, trial % 2 == 0);
    std::vector<double> all;
    std::vector<int> perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    do {
      all.push_back(assignment_cost(cost, perm));
    } while (std::next_permutation(perm.begin(), perm.end()));
    std::sort(all.begin(), all.end());
    const auto ranked = murty_kbest(cost, 10);
    ++r.cases;
    bool ok = ranked.size() == 10;
    for (std::size_t i = 0; ok && i < ranked.size(); ++i) {
      const double delta = std::abs(ranked[i].total_cost - all[i]);
      r.worst = std::max(r.worst, delta);
      ok = delta < r.tolerance;
    }
    if (!ok) ++r.failures;
  }
  r.seconds = elapsed(start);
  return r;
}

enum class Loss { ClusterDistance, RotationCe, TemperatureCe };

struct Triple {
  Matrix x;
  Matrix targets;         // unit rows for the distance loss
  std::vector<int> rot;   // rotation labels
  std::vector<int> cls;   // class labels
  double temperature = 0.1;
  Loss loss = Loss::ClusterDistance;
};

double loss_value(const Model& m, const Triple& t) {
  const ModelOutputs out = forward(m, t.x);
  switch (t.loss) {
    case Loss::ClusterDistance: return (out.cluster - t.targets).squaredNorm();
    case Loss::RotationCe: return softmax_cross_entropy(out.rot_logits, t.rot).loss;
    case Loss::TemperatureCe: return softmax_cross_entropy(out.cluster / t.temperature, t.cls).loss;
  }
  return 0;
}

Vector analytic(const Model& m, const Triple& t) {
  const Tape tape = forward_recorded(m, t.x);
  switch (t.loss) {
    case Loss::ClusterDistance:
      return backward(m, tape, 2 * (tape.outputs.cluster - t.targets), Matrix());
    case Loss::RotationCe:
      return backward(m, tape, Matrix(), softmax_cross_entropy(tape.outputs.rot_logits, t.rot).d_logits);
    case Loss::TemperatureCe: {
      const auto ce = softmax_cross_entropy(tape.outputs.cluster / t.temperature, t.cls);
      return backward(m, tape, ce.d_logits / t.temperature, Matrix());
    }
  }
  return {};
}

CheckResult check_gradients(Rng& rng) {
  CheckResult r{"backprop == central differences", 0, 0, 0, 1e-4, 0};
  const auto start = Clock::now();
  std::uniform_real_distribution<double> unit(-1.5, 1.5);
  constexpr double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    ModelSpec spec;
    if (trial % 4 == 3) {
      spec.input = DataShape::image(6, 6, 1 + trial % 2);
      spec.trunk = TrunkKind::Conv;
      spec.conv_channels = {3, 4, 2};
    } else {
      spec.input = DataShape::vector(3 + trial % 4);
      spec.hidden = {6 + trial % 3, 5};
    }
    spec.num_clusters = 2 + trial % 4;
    const Model model(spec, rng());
    const int n = 2 + trial % 3;
    Triple t;
    t.loss = Loss(trial % 3);
    t.x = Matrix(n, model.input_size());
    for (Eigen::Index i = 0; i < t.x.size(); ++i) t.x.data()[i] = unit(rng);
    t.targets = Matrix::Zero(n, spec.num_clusters);
    for (int i = 0; i < n; ++i) {
      t.targets(i, (i + trial) % spec.num_clusters) = 1;
      t.rot.push_back((3 * i + trial) % 4);
      t.cls.push_back((i + 2 * trial) % spec.num_clusters);
    }
    const Vector g = analytic(model, t);
    Model probe = model;
    Vector theta = model.parameters();
    double worst = 0;
    for (Eigen::Index p = 0; p < theta.size(); ++p) {
      const double keep = theta[p];
      theta[p] = keep + h;
      probe.set_parameters(theta);
      const double up = loss_value(probe, t);
      theta[p] = keep - h;
      probe.set_parameters(theta);
      const double down = loss_value(probe, t);
      theta[p] = keep;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max({std::abs(numeric), std::abs(g[p]), 1e-6});
      worst = std::max(worst, std::abs(numeric - g[p]) / scale);
    }
    r.worst = std::max(r.worst, worst);
    ++r.cases;
    if (!(worst < r.tolerance)) ++r.failures;
  }
  r.seconds = elapsed(start);
  return r;
}

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& opts) {
  Rng rng(opts.seed);
  std::vector<CheckResult> out;
  out.push_back(check_hungarian(rng, opts.corrupt_costs));
  out.push_back(check_murty(rng));
  out.push_back(check_gradients(rng));
  return out;
}

}  // namespace bssl
