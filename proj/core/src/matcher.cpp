#include "setdet/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "setdet/errors.hpp"
#include "setdet/loss.hpp"

namespace setdet {

CostMatrix CostMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  CostMatrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols) throw DimensionError("CostMatrix: ragged rows");
    std::copy(rows[i].begin(), rows[i].end(), m.costs.begin() + static_cast<std::ptrdiff_t>(i * m.cols));
  }
  return m;
}

CostMatrix build_cost_matrix(std::span<const Annotation> gts, const PredictionSet& preds,
                             double lambda_iou, double lambda_l1) {
  const std::size_t n = preds.num_queries();
  if (gts.size() > n)
    throw CapacityExceeded(std::to_string(gts.size()) + " ground truths exceed " + std::to_string(n) +
                           " prediction slots");
  LossConfig cfg;
  cfg.lambda_iou = lambda_iou;
  cfg.lambda_l1 = lambda_l1;
  cfg.num_classes = preds.num_classes();

  std::vector<Box> pred_boxes;
  pred_boxes.reserve(n);
  for (std::size_t j = 0; j < n; ++j) pred_boxes.push_back(preds.box(j));

  CostMatrix m(gts.size(), n);
  for (std::size_t i = 0; i < gts.size(); ++i) {
    const auto& gt = gts[i];
    if (gt.class_id < 0 || static_cast<std::size_t>(gt.class_id) >= cfg.num_classes)
      throw ContractError("ground-truth class id " + std::to_string(gt.class_id) + " out of range");
    if (gt.box.format != BoxFormat::CenterNorm)
      throw ContractError("build_cost_matrix expects CenterNorm ground-truth boxes");
    const auto cls = static_cast<std::size_t>(gt.class_id);
    for (std::size_t j = 0; j < n; ++j)
      m.at(i, j) = -preds.prob(j, cls) + box_loss(gt.box, pred_boxes[j], cfg);
  }
  return m;
}

namespace {

struct Solution {
  std::vector<std::size_t> row_to_col;
  std::vector<double> u;  // row potentials
  std::vector<double> v;  // column potentials
};

// Shortest-augmenting-path Hungarian method on an n x m matrix with n <= m.
// Unmatched columns keep v == 0 and v <= 0 everywhere, so (u, v) is an
// optimal dual of the rectangular problem.
Solution solve_rectangular(const std::vector<double>& c, std::size_t n, std::size_t m) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  std::vector<double> minv(m + 1);
  std::vector<char> used(m + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = c[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
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
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Solution s;
  s.row_to_col.assign(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) s.row_to_col[p[j] - 1] = j - 1;
  s.u.assign(u.begin() + 1, u.end());
  s.v.assign(v.begin() + 1, v.end());
  return s;
}

// Optimal assignment of `rows` onto `cols` (both index lists into `m`).
// Returns the optimal cost and writes the chosen original column per row.
double solve_subproblem(const CostMatrix& m, std::span<const std::size_t> rows,
                        std::span<const std::size_t> cols, std::vector<std::size_t>& out) {
  out.clear();
  if (rows.empty()) return 0.0;
  std::vector<double> sub(rows.size() * cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t k = 0; k < cols.size(); ++k) sub[r * cols.size() + k] = m.at(rows[r], cols[k]);
  const auto s = solve_rectangular(sub, rows.size(), cols.size());
  double total = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.push_back(cols[s.row_to_col[r]]);
    total += m.at(rows[r], out.back());
  }
  return total;
}

}  // namespace

Assignment hungarian_assign(const CostMatrix& costs) {
  const std::size_t n = costs.rows, m = costs.cols;
  if (costs.costs.size() != n * m) throw DimensionError("CostMatrix: entry count mismatch");
  if (n > m)
    throw CapacityExceeded(std::to_string(n) + " ground truths exceed " + std::to_string(m) +
                           " prediction slots");
  double scale = 1.0;
  for (double c : costs.costs) {
    if (!std::isfinite(c)) throw ContractError("hungarian_assign: non-finite cost");
    scale = std::max(scale, std::fabs(c));
  }
  Assignment result;
  if (n == 0) return result;

  const auto sol = solve_rectangular(costs.costs, n, m);
  std::vector<std::size_t> sigma = sol.row_to_col;
  double best = 0.0;
  for (std::size_t i = 0; i < n; ++i) best += costs.at(i, sigma[i]);

  // Every optimal assignment uses only edges tight under the optimal dual.
  // Walk rows in order and move each one to the smallest tight column that
  // still admits an optimal completion of the remaining rows.
  const double tol = 1e-9 * scale * static_cast<double>(n);
  std::vector<char> taken(m, 0);
  double prefix = 0.0;
  std::vector<std::size_t> rest_rows, free_cols, completion;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < sigma[i]; ++j) {
      if (taken[j]) continue;
      if (costs.at(i, j) - sol.u[i] - sol.v[j] > tol) continue;
      rest_rows.clear();
      free_cols.clear();
      for (std::size_t r = i + 1; r < n; ++r) rest_rows.push_back(r);
      for (std::size_t k = 0; k < m; ++k)
        if (!taken[k] && k != j) free_cols.push_back(k);
      const double total = prefix + costs.at(i, j) + solve_subproblem(costs, rest_rows, free_cols, completion);
      if (total <= best + tol) {
        sigma[i] = j;
        for (std::size_t r = 0; r < rest_rows.size(); ++r) sigma[rest_rows[r]] = completion[r];
        break;
      }
    }
    taken[sigma[i]] = 1;
    prefix += costs.at(i, sigma[i]);
  }

  result.sigma = std::move(sigma);
  for (std::size_t i = 0; i < n; ++i) result.total_cost += costs.at(i, result.sigma[i]);
  return result;
}

}  // namespace setdet
