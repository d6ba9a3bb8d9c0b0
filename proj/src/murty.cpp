#include "bssl/assignment/assignment.hpp"

#include <algorithm>
#include <limits>
#include <queue>

namespace bssl {

Assignment brute_force_solve(const Matrix& cost) {
  validate_cost_matrix(cost);
  const int c = int(cost.rows());
  const int b = int(cost.cols());
  if (b > kBruteForceMaxCols) {
    fail(ErrorKind::SizeGuard, "brute_force_solve supports at most " +
                                   std::to_string(kBruteForceMaxCols) + " columns");
  }
  Assignment best;
  best.total_cost = std::numeric_limits<double>::infinity();
  std::vector<int> map(std::size_t(c), -1);
  std::vector<char> used(std::size_t(b), 0);
  // Depth-first in lexicographic order; strict improvement keeps the first optimum.
  auto recurse = [&](auto&& self, int row, double partial) -> void {
    if (row == c) {
      if (partial < best.total_cost) {
        best.total_cost = partial;
        best.map = map;
      }
      return;
    }
    for (int j = 0; j < b; ++j) {
      if (used[std::size_t(j)]) continue;
      used[std::size_t(j)] = 1;
      map[std::size_t(row)] = j;
      self(self, row + 1, partial + cost(row, j));
      used[std::size_t(j)] = 0;
    }
  };
  recurse(recurse, 0, 0.0);
  best.total_cost = assignment_cost(cost, best.map);
  return best;
}

namespace {

constexpr double kForbidden = std::numeric_limits<double>::infinity();

struct MurtyNode {
  Matrix cost;      // constrained copy; forbidden cells are +inf
  int first_free;   // rows [0, first_free) are forced to their current column
  Assignment solution;
};

struct NodeOrder {
  // Min-heap on (cost, map) so equal-cost solutions pop in a fixed order.
  bool operator()(const MurtyNode& a, const MurtyNode& b) const {
    if (a.solution.total_cost != b.solution.total_cost) {
      return a.solution.total_cost > b.solution.total_cost;
    }
    return a.solution.map > b.solution.map;
  }
};

}  // namespace

std::vector<Assignment> murty_kbest(const Matrix& cost, std::size_t k) {
  if (k == 0) fail(ErrorKind::Argument, "murty_kbest needs k >= 1");
  validate_cost_matrix(cost);
  const int c = int(cost.rows());
  const int b = int(cost.cols());
  if (c == 0) return {Assignment{}};

  std::priority_queue<MurtyNode, std::vector<MurtyNode>, NodeOrder> queue;
  {
    MurtyNode root{cost, 0, detail::solve_masked(cost)};
    queue.push(std::move(root));
  }

  std::vector<Assignment> out;
  while (!queue.empty() && out.size() < k) {
    MurtyNode node = queue.top();
    queue.pop();
    // Report the true cost of the solution, not the constrained copy's.
    Assignment result = node.solution;
    result.total_cost = assignment_cost(cost, result.map);
    out.push_back(result);
    if (out.size() == k) break;

    // Partition the remaining solution space of this node: child t keeps rows
    // before t on the current solution and excludes (t, map[t]).
    Matrix constrained = node.cost;
    for (int t = node.first_free; t < c; ++t) {
      const int col = node.solution.map[std::size_t(t)];
      Matrix child_cost = constrained;
      child_cost(t, col) = kForbidden;
      Assignment child = detail::solve_masked(child_cost);
      if (!child.map.empty()) queue.push(MurtyNode{std::move(child_cost), t, std::move(child)});

      // Force (t, col) for the following children.
      for (int j = 0; j < b; ++j) {
        if (j != col) constrained(t, j) = kForbidden;
      }
      for (int i = 0; i < c; ++i) {
        if (i != t) constrained(i, col) = kForbidden;
      }
    }
  }
  return out;
}

}  // namespace bssl
