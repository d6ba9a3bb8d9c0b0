#include "bssl/error.hpp"
#include "bssl/numeric/model.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

namespace bssl {
namespace {

ModelSpec small_mlp(int d = 5, int k = 3) {
  ModelSpec spec;
  spec.input = DataShape::vector(d);
  spec.hidden = {7, 6};
  spec.num_clusters = k;
  return spec;
}

ModelSpec small_conv() {
  ModelSpec spec;
  spec.input = DataShape::image(6, 6, 2);
  spec.trunk = TrunkKind::Conv;
  spec.conv_channels = {3, 4, 2};
  spec.num_clusters = 4;
  return spec;
}

Matrix random_batch(std::mt19937_64& rng, int n, int d) {
  return oracle::random_matrix(rng, n, d, -1.5, 1.5);
}

TEST(Model, ZeroClusterWeightsYieldNormalizedBias) {
  Model model(small_mlp(), 3);
  const auto& head = model.cluster_head();
  Vector theta = model.parameters();
  theta.segment(Eigen::Index(head.offset), head.out * head.in).setZero();
  Vector bias(3);
  bias << 3.0, -4.0, 12.0;
  theta.segment(Eigen::Index(head.offset) + head.out * head.in, 3) = bias;
  model.set_parameters(theta);

  std::mt19937_64 rng(1);
  const auto out = forward(model, random_batch(rng, 4, 5));
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_NEAR(out.cluster(i, 0), 3.0 / 13.0, 1e-15);
    EXPECT_NEAR(out.cluster(i, 1), -4.0 / 13.0, 1e-15);
    EXPECT_NEAR(out.cluster(i, 2), 12.0 / 13.0, 1e-15);
  }
}

TEST(Model, DegenerateOutputMapsToFirstBasisVector) {
  Model model(small_mlp(), 3);
  const auto& head = model.cluster_head();
  Vector theta = model.parameters();
  theta.segment(Eigen::Index(head.offset), Eigen::Index(head.parameter_count())).setZero();
  model.set_parameters(theta);
  std::mt19937_64 rng(2);
  const auto out = forward(model, random_batch(rng, 2, 5));
  EXPECT_EQ(out.cluster(0, 0), 1.0);
  EXPECT_EQ(out.cluster(1, 2), 0.0);
}

TEST(Model, BatchIndependence) {
  for (const auto& spec : {small_mlp(), small_conv()}) {
    Model model(spec, 11);
    std::mt19937_64 rng(5);
    const Matrix x = random_batch(rng, 6, model.input_size());
    const auto full = forward(model, x);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const auto single = forward(model, Matrix(x.row(i)));
      EXPECT_LT((single.cluster.row(0) - full.cluster.row(i)).norm(), 1e-14);
      EXPECT_LT((single.rot_logits.row(0) - full.rot_logits.row(i)).norm(), 1e-13);
    }
  }
}

TEST(Model, ParallelForwardMatchesSerial) {
  Model model(small_mlp(), 4);
  std::mt19937_64 rng(6);
  const Matrix x = random_batch(rng, 301, 5);
  const auto serial = forward(model, x, 1);
  const auto parallel = forward(model, x, 4);
  EXPECT_EQ(serial.cluster, parallel.cluster);
  EXPECT_EQ(serial.rot_logits, parallel.rot_logits);
}

TEST(Model, OutputsAreUnitNorm) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Model model(trial % 2 ? small_conv() : small_mlp(), std::uint64_t(trial));
    const auto out = forward(model, random_batch(rng, 9, model.input_size()));
    ASSERT_EQ(out.rot_logits.cols(), 4);
    for (Eigen::Index i = 0; i < out.cluster.rows(); ++i) {
      EXPECT_NEAR(out.cluster.row(i).norm(), 1.0, 1e-9);
    }
  }
}

TEST(Model, InputShapeMismatchThrows) {
  Model model(small_mlp(), 1);
  try {
    forward(model, Matrix::Zero(2, 4));
    FAIL() << "expected a shape error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(Model, BackwardWithoutForwardIsStateError) {
  Model model(small_mlp(), 1);
  Tape tape;
  try {
    backward(model, tape, Matrix::Zero(1, 3), Matrix());
    FAIL() << "expected a state error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::State);
  }
}

TEST(Model, ZeroUpstreamGivesZeroGradient) {
  Model model(small_conv(), 1);
  std::mt19937_64 rng(3);
  const Tape tape = forward_recorded(model, random_batch(rng, 3, model.input_size()));
  const Vector g = backward(model, tape, Matrix::Zero(3, 4), Matrix::Zero(3, 4));
  EXPECT_EQ(g.size(), Eigen::Index(model.parameter_count()));
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Model, NormalizationJacobianMatchesClosedForm) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix v = oracle::random_matrix(rng, 1, 5, -2, 2);
    const Matrix g = oracle::random_matrix(rng, 1, 5, -1, 1);
    const Vector vv = v.row(0).transpose();
    const double n2 = vv.squaredNorm();
    const Eigen::MatrixXd jac =
        (Eigen::MatrixXd::Identity(5, 5) - vv * vv.transpose() / n2) / std::sqrt(n2);
    const Vector expected = jac * g.row(0).transpose();
    const Matrix got = normalize_rows_backward(v, g);
    EXPECT_LT((got.row(0).transpose() - expected).norm(), 1e-13);
  }
}

// Loss types for the finite-difference oracle.
enum class LossKind { SquaredDistance, RotationCrossEntropy, Both };

double loss_value(const ModelOutputs& out, const Matrix& targets, const Eigen::VectorXi& rot,
                  LossKind kind) {
  double total = 0;
  if (kind != LossKind::RotationCrossEntropy) total += (out.cluster - targets).squaredNorm();
  if (kind != LossKind::SquaredDistance) {
    const Matrix logp = log_softmax_rows(out.rot_logits);
    for (Eigen::Index i = 0; i < logp.rows(); ++i) total -= logp(i, rot[i]);
  }
  return total;
}

Vector analytic_gradient(const Model& model, const Matrix& x, const Matrix& targets,
                         const Eigen::VectorXi& rot, LossKind kind) {
  const Tape tape = forward_recorded(model, x);
  Matrix dc, dr;
  if (kind != LossKind::RotationCrossEntropy) dc = 2 * (tape.outputs.cluster - targets);
  if (kind != LossKind::SquaredDistance) {
    dr = softmax_rows(tape.outputs.rot_logits);
    for (Eigen::Index i = 0; i < dr.rows(); ++i) dr(i, rot[i]) -= 1;
  }
  return backward(model, tape, dc, dr);
}

TEST(Model, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(2024);
  double worst = 0;
  for (int trial = 0; trial < 24; ++trial) {
    const ModelSpec spec = trial % 3 == 2 ? small_conv() : small_mlp(4 + trial % 3, 3 + trial % 2);
    Model model(spec, std::uint64_t(100 + trial));
    const int n = 2 + trial % 4;
    const Matrix x = random_batch(rng, n, model.input_size());
    Matrix targets = Matrix::Zero(n, spec.num_clusters);
    Eigen::VectorXi rot(n);
    for (int i = 0; i < n; ++i) {
      targets(i, (i + trial) % spec.num_clusters) = 1;
      rot[i] = (i * 3 + trial) % 4;
    }
    const auto kind = static_cast<LossKind>(trial % 3);
    const Vector analytic = analytic_gradient(model, x, targets, rot, kind);
    Model probe = model;
    const Vector numeric = oracle::finite_difference(
        [&](const Vector& theta) {
          probe.set_parameters(theta);
          return loss_value(forward(probe, x), targets, rot, kind);
        },
        model.parameters(), 1e-5);
    const double err = oracle::max_relative_error(analytic, numeric);
    worst = std::max(worst, err);
    EXPECT_LT(err, 1e-4) << "trial " << trial;
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Model, ParameterCountMatchesLayout) {
  Model model(small_mlp(5, 3), 0);
  // 5*7+7 + 7*6+6 + 6*3+3 + 6*4+4
  EXPECT_EQ(model.parameter_count(), std::size_t(42 + 48 + 21 + 28));
  Model conv(small_conv(), 0);
  // conv 2->3, 3->4, 4->2 on 6x6 -> 6x6 -> 3x3 -> 2x2; features 2*2*2 = 8
  EXPECT_EQ(conv.feature_size(), 8);
  EXPECT_EQ(conv.parameter_count(), std::size_t((2 * 9 * 3 + 3) + (3 * 9 * 4 + 4) +
                                                (4 * 9 * 2 + 2) + (8 * 4 + 4) + (8 * 4 + 4)));
}

TEST(Model, ConvTrunkRejectsVectorInput) {
  ModelSpec spec = small_mlp();
  spec.trunk = TrunkKind::Conv;
  EXPECT_THROW(Model(spec, 0), Error);
}

}  // namespace
}  // namespace bssl
