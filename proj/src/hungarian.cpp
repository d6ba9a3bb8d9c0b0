#include "bssl/assignment/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bssl {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct DualSolution {
  std::vector<int> row_to_col;  // size c
  std::vector<double> u;        // row potentials
  std::vector<double> v;        // column potentials (<= 0; zero on unmatched columns)
};

// Shortest augmenting path Hungarian for c <= b, O(c^2 b). Infinite cells are
// forbidden. Returns false when some row cannot be matched.
bool solve_potentials(const Matrix& a, DualSolution& out) {
  const int c = int(a.rows());
  const int b = int(a.cols());
  std::vector<double> u(c + 1, 0.0), v(b + 1, 0.0), minv(b + 1);
  std::vector<int> p(b + 1, 0), way(b + 1, 0);
  std::vector<char> used(b + 1);
  for (int i = 1; i <= c; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = -1;
      for (int j = 1; j <= b; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      if (j1 < 0 || !std::isfinite(delta)) return false;
      for (int j = 0; j <= b; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  out.row_to_col.assign(c, -1);
  for (int j = 1; j <= b; ++j) {
    if (p[j] != 0) out.row_to_col[p[j] - 1] = j - 1;
  }
  out.u.assign(u.begin() + 1, u.end());
  out.v.assign(v.begin() + 1, v.end());
  return true;
}

// Every optimal assignment is a perfect matching on the edges that are tight under
// an optimal dual, in the problem padded with b - c zero-cost dummy rows (a dummy row
// is tight exactly on the columns with zero potential). Walking the real rows in
// order and re-routing each to its smallest feasible tight column through an
// alternating path yields the lexicographically smallest optimal map.
std::vector<int> lexicographic_refine(const Matrix& a, const DualSolution& dual) {
  const int c = int(a.rows());
  const int b = int(a.cols());
  double scale = 1.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (std::isfinite(a.data()[i])) scale = std::max(scale, std::abs(a.data()[i]));
  }
  const double tol = 1e-10 * scale;

  std::vector<std::vector<char>> tight(b, std::vector<char>(b, 0));
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < b; ++j) {
      tight[i][j] = std::isfinite(a(i, j)) && a(i, j) - dual.u[i] - dual.v[j] <= tol;
    }
  }
  for (int i = c; i < b; ++i) {
    for (int j = 0; j < b; ++j) tight[i][j] = dual.v[j] >= -tol;
  }

  std::vector<int> row_of(b, -1), col_of(b, -1);
  for (int i = 0; i < c; ++i) {
    col_of[i] = dual.row_to_col[i];
    row_of[col_of[i]] = i;
  }
  int dummy = c;
  for (int j = 0; j < b; ++j) {
    if (row_of[j] < 0) {
      row_of[j] = dummy;
      col_of[dummy] = j;
      ++dummy;
    }
  }

  std::vector<char> fixed(b, 0), seen(b, 0);
  for (int i = 0; i < c; ++i) {
    fixed[i] = 1;
    const int current = col_of[i];
    for (int j = 0; j < current; ++j) {
      if (!tight[i][j] || fixed[row_of[j]]) continue;
      // Tentatively give column j to row i; the previous owner of j must reach the
      // column that row i releases through unfixed rows.
      const int start = row_of[j];
      std::fill(seen.begin(), seen.end(), 0);
      std::vector<int> stack = {start};
      std::vector<int> from(b, -1);  // from[row] = previous row on the path
      int end_row = -1;
      seen[j] = 1;
      while (!stack.empty() && end_row < 0) {
        const int r = stack.back();
        stack.pop_back();
        for (int col = 0; col < b; ++col) {
          if (!tight[r][col] || seen[col]) continue;
          if (col == current) {
            end_row = r;
            break;
          }
          const int next = row_of[col];
          if (fixed[next]) continue;
          seen[col] = 1;
          from[next] = r;
          stack.push_back(next);
        }
      }
      if (end_row < 0) continue;
      // Collect the path rows start -> ... -> end_row by walking `from` backwards.
      std::vector<int> path;
      for (int r = end_row; r != -1; r = (r == start ? -1 : from[r])) path.push_back(r);
      std::vector<std::pair<int, int>> moves;
      for (std::size_t k = 0; k < path.size(); ++k) {
        const int r = path[k];
        // Each path row takes the column leading to its successor (or the freed one).
        const int col = k == 0 ? current : col_of[path[k - 1]];
        moves.emplace_back(r, col);
      }
      for (auto [r, col] : moves) {
        col_of[r] = col;
        row_of[col] = r;
      }
      col_of[i] = j;
      row_of[j] = i;
      break;
    }
  }
  return {col_of.begin(), col_of.begin() + c};
}

}  // namespace

Permutation Permutation::identity(int k) {
  Permutation p;
  p.perm.resize(std::size_t(k));
  std::iota(p.perm.begin(), p.perm.end(), 0);
  return p;
}

bool Permutation::is_bijection() const {
  std::vector<char> hit(perm.size(), 0);
  for (int x : perm) {
    if (x < 0 || std::size_t(x) >= perm.size() || hit[std::size_t(x)]) return false;
    hit[std::size_t(x)] = 1;
  }
  return true;
}

Permutation Permutation::inverse() const {
  Permutation out;
  out.perm.assign(perm.size(), 0);
  for (std::size_t i = 0; i < perm.size(); ++i) out.perm[std::size_t(perm[i])] = int(i);
  return out;
}

double assignment_cost(const Matrix& cost, const std::vector<int>& map) {
  double total = 0;
  for (std::size_t i = 0; i < map.size(); ++i) total += cost(Eigen::Index(i), map[i]);
  return total;
}

void validate_cost_matrix(const Matrix& cost) {
  if (cost.rows() > cost.cols()) {
    fail(ErrorKind::Shape, "cost matrix has more targets (" + std::to_string(cost.rows()) +
                               ") than items (" + std::to_string(cost.cols()) + ")");
  }
  if (!cost.allFinite()) fail(ErrorKind::Input, "cost matrix contains non-finite entries");
}

namespace detail {

Assignment solve_masked(const Matrix& cost) {
  if (cost.rows() == 0) return {{}, 0.0};
  DualSolution dual;
  if (!solve_potentials(cost, dual)) return {};
  Assignment out;
  out.map = lexicographic_refine(cost, dual);
  out.total_cost = assignment_cost(cost, out.map);
  return out;
}

}  // namespace detail

Assignment hungarian_solve(const Matrix& cost) {
  validate_cost_matrix(cost);
  return detail::solve_masked(cost);
}

}  // namespace bssl
