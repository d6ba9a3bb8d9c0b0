#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <random>
#include <span>

namespace bssl {

/// Row-major dense matrix; one sample per row throughout the library.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;

/// Contiguous read-only view of a vector's coefficients.
inline std::span<const double> as_span(const Vector& v) {
  return {v.data(), std::size_t(v.size())};
}

/// The single generator type used for every random draw.
using Rng = std::mt19937_64;

/// Rows whose norm falls below this are mapped to the first basis vector.
inline constexpr double kNormEpsilon = 1e-12;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

/// Row-wise L2 normalization. Degenerate rows (norm < kNormEpsilon) become e_0.
template <typename Derived>
MatrixX<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const Scalar norm = v.row(i).norm();
    if (norm < Scalar(kNormEpsilon)) {
      out.row(i).setZero();
      if (v.cols() > 0) out(i, 0) = Scalar(1);
    } else {
      out.row(i) = v.row(i) / norm;
    }
  }
  return out;
}

/// Vector-Jacobian product of row-wise normalization:
/// for each row, grad_v = (I - u u^T) grad_u / ||v|| with u = v / ||v||.
/// Degenerate rows are treated as constant (zero gradient).
template <typename DerivedV, typename DerivedG>
MatrixX<typename DerivedV::Scalar> normalize_rows_backward(
    const Eigen::MatrixBase<DerivedV>& v, const Eigen::MatrixBase<DerivedG>& upstream) {
  using Scalar = typename DerivedV::Scalar;
  MatrixX<Scalar> out(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const Scalar norm = v.row(i).norm();
    if (norm < Scalar(kNormEpsilon)) {
      out.row(i).setZero();
      continue;
    }
    const RowVectorX<Scalar> u = v.row(i) / norm;
    const Scalar proj = u.dot(upstream.row(i));
    out.row(i) = (upstream.row(i) - proj * u) / norm;
  }
  return out;
}

/// Numerically stable row-wise softmax of `logits / temperature`.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& logits,
                                               typename Derived::Scalar temperature = 1) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = logits / temperature;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const Scalar mx = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

/// Row-wise log-softmax of `logits / temperature`.
template <typename Derived>
MatrixX<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& logits,
                                                   typename Derived::Scalar temperature = 1) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = logits / temperature;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const Scalar mx = out.row(i).maxCoeff();
    const Scalar lse = mx + std::log((out.row(i).array() - mx).exp().sum());
    out.row(i).array() -= lse;
  }
  return out;
}

/// Index of the largest entry of each row; ties resolve to the lowest index.
template <typename Derived>
Eigen::VectorXi argmax_rows(const Eigen::MatrixBase<Derived>& m) {
  Eigen::VectorXi out(m.rows());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < m.cols(); ++j) {
      if (m(i, j) > m(i, best)) best = j;
    }
    out(i) = static_cast<int>(best);
  }
  return out;
}

}  // namespace bssl
