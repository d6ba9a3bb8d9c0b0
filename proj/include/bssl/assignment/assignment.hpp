#pragma once

#include "bssl/error.hpp"
#include "bssl/numeric/dense.hpp"

#include <cstddef>
#include <vector>

namespace bssl {

/// Solution of a c x b assignment problem (c <= b): row i is matched to column map[i].
struct Assignment {
  std::vector<int> map;
  double total_cost = 0;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

/// Bijection [K] -> [K].
struct Permutation {
  std::vector<int> perm;

  static Permutation identity(int k);
  bool is_bijection() const;
  int operator()(int i) const { return perm[std::size_t(i)]; }
  Permutation inverse() const;

  friend bool operator==(const Permutation&, const Permutation&) = default;
};

/// Sum of cost(i, map[i]).
double assignment_cost(const Matrix& cost, const std::vector<int>& map);

/// Throws Shape when rows > cols and Input on non-finite entries.
void validate_cost_matrix(const Matrix& cost);

/// Globally optimal injective assignment (Hungarian method with potentials). Among
/// equal-cost optima the lexicographically smallest map is returned.
Assignment hungarian_solve(const Matrix& cost);

template <typename Derived>
Assignment hungarian_solve(const Eigen::MatrixBase<Derived>& cost) {
  return hungarian_solve(Matrix(cost.template cast<double>()));
}

/// Exhaustive optimum over all injections; first optimum in lexicographic order wins.
/// Limited to at most kBruteForceMaxCols columns.
inline constexpr int kBruteForceMaxCols = 8;
Assignment brute_force_solve(const Matrix& cost);

/// The min(k, #injections) cheapest assignments in nondecreasing cost order, by Murty's
/// partitioning with a cost-keyed priority queue. Element 0 equals hungarian_solve(cost).
std::vector<Assignment> murty_kbest(const Matrix& cost, std::size_t k);

namespace detail {

/// Hungarian solve where +infinity marks forbidden cells. Returns an empty map when
/// no feasible assignment exists.
Assignment solve_masked(const Matrix& cost);

}  // namespace detail

}  // namespace bssl
