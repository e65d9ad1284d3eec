#pragma once

// Distances between point sets: exact EMD (shortest augmenting path
// Hungarian), auction-based approximate EMD, and Chamfer nearest-neighbour
// matching. Ground cost is the unsquared Euclidean norm unless a squared cost
// is requested.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "n2n/core.hpp"
#include "n2n/kdtree.hpp"

namespace n2n {

enum class GroundCost { Euclidean, SquaredEuclidean };

inline double ground_cost(const Point3& a, const Point3& b, GroundCost gc) {
  const double d2 = (a - b).squaredNorm();
  return gc == GroundCost::Euclidean ? std::sqrt(d2) : d2;
}

struct Matching {
  std::vector<std::size_t> assignment;  // source index -> target index
  double cost = 0.0;
};

/// Sum of ground costs over the assignment, accumulated in source order.
inline double matching_cost(std::span<const Point3> src, std::span<const Point3> tgt,
                            const std::vector<std::size_t>& assignment, GroundCost gc = GroundCost::Euclidean) {
  double c = 0.0;
  for (std::size_t k = 0; k < src.size(); ++k) c += ground_cost(src[k], tgt[assignment[k]], gc);
  return c;
}

inline bool is_bijection(const std::vector<std::size_t>& assignment, std::size_t n) {
  if (assignment.size() != n) return false;
  std::vector<char> seen(n, 0);
  for (auto j : assignment) {
    if (j >= n || seen[j]) return false;
    seen[j] = 1;
  }
  return true;
}

inline constexpr std::size_t kDefaultExactThreshold = 1024;

/// Minimum-cost perfect matching, O(B^3). Shortest augmenting paths with
/// row/column potentials (the Jonker-Volgenant family).
inline Matching emd_exact(std::span<const Point3> src, std::span<const Point3> tgt,
                          GroundCost gc = GroundCost::Euclidean) {
  require(src.size() == tgt.size(), "EMD needs equal-size point sets");
  const std::size_t n = src.size();
  Matching m;
  if (n == 0) return m;

  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based internally; row 0 / column 0 are the virtual start.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> col_owner(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  std::vector<double> row_cost(n);

  for (std::size_t i = 1; i <= n; ++i) {
    col_owner[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = col_owner[j0];
      const Point3& p = src[i0 - 1];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = ground_cost(p, tgt[j - 1], gc) - u[i0] - v[j];
        if (cur < minv[j]) minv[j] = cur, way[j] = j0;
        if (minv[j] < delta) delta = minv[j], j1 = j;
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[col_owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (col_owner[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      col_owner[j0] = col_owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  m.assignment.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) m.assignment[col_owner[j] - 1] = j - 1;
  m.cost = matching_cost(src, tgt, m.assignment, gc);
  return m;
}

inline Matching emd_exact(const PointCloud& src, const PointCloud& tgt, GroundCost gc = GroundCost::Euclidean) {
  return emd_exact(std::span<const Point3>(src.points), std::span<const Point3>(tgt.points), gc);
}

struct AuctionOptions {
  std::size_t max_iters = 50'000'000;  // total bids across all scaling phases
  double scaling_factor = 5.0;
  /// Target relative suboptimality. The final epsilon is chosen so that
  /// B * eps stays below this fraction of a lower bound on the optimal cost.
  double rel_tolerance = 0.005;
};

/// Forward auction with epsilon scaling (Gauss-Seidel bidding). Returns a
/// bijection whose cost is within B * eps_final of the optimum.
inline Matching emd_approx(std::span<const Point3> src, std::span<const Point3> tgt, const AuctionOptions& opt = {},
                           GroundCost gc = GroundCost::Euclidean) {
  require(src.size() == tgt.size(), "EMD needs equal-size point sets");
  const std::size_t n = src.size();
  Matching m;
  if (n == 0) return m;

  // Lower bound on the optimum: every source pays at least its nearest
  // target. It calibrates the final epsilon.
  KdTree tree(tgt);
  double lower_bound = 0.0, max_cost = 0.0;
  for (const auto& p : src) {
    const double d2 = tree.nearest(p).dist2;
    lower_bound += gc == GroundCost::Euclidean ? std::sqrt(d2) : d2;
  }
  for (const auto& p : src) max_cost = std::max(max_cost, ground_cost(p, tgt[0], gc));
  const double span = std::max(max_cost, 1e-300);
  const double eps_final =
      std::max(opt.rel_tolerance * lower_bound / static_cast<double>(n), 1e-12 * span / static_cast<double>(n));
  double eps = std::max(span / 4.0, eps_final);

  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<double> price(n, 0.0);
  std::vector<std::size_t> owner(n, kNone), assigned(n, kNone);
  std::vector<std::size_t> queue;
  queue.reserve(n);
  std::size_t iters = 0;

  while (true) {
    std::fill(owner.begin(), owner.end(), kNone);
    std::fill(assigned.begin(), assigned.end(), kNone);
    queue.resize(n);
    std::iota(queue.begin(), queue.end(), std::size_t{0});
    std::size_t head = 0;
    while (head < queue.size()) {
      if (++iters > opt.max_iters) fail(ErrorKind::ApproximationFailed, "auction did not converge within max_iters");
      const std::size_t i = queue[head++];
      double best = -std::numeric_limits<double>::infinity(), second = best;
      std::size_t best_j = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double value = -ground_cost(src[i], tgt[j], gc) - price[j];
        if (value > best) {
          second = best;
          best = value;
          best_j = j;
        } else if (value > second) {
          second = value;
        }
      }
      const double increment = (n == 1 ? 0.0 : best - second) + eps;
      price[best_j] += increment;
      if (owner[best_j] != kNone) {
        assigned[owner[best_j]] = kNone;
        queue.push_back(owner[best_j]);
      }
      owner[best_j] = i;
      assigned[i] = best_j;
      if (head > n && head * 2 > queue.size()) {
        queue.erase(queue.begin(), queue.begin() + static_cast<std::ptrdiff_t>(head));
        head = 0;
      }
    }
    if (eps <= eps_final) break;
    eps = std::max(eps / opt.scaling_factor, eps_final);
  }

  m.assignment = std::move(assigned);
  m.cost = matching_cost(src, tgt, m.assignment, gc);
  return m;
}

inline Matching emd_approx(const PointCloud& src, const PointCloud& tgt, std::size_t max_iters) {
  AuctionOptions opt;
  opt.max_iters = max_iters;
  return emd_approx(std::span<const Point3>(src.points), std::span<const Point3>(tgt.points), opt);
}

/// Exact below the threshold, auction above it. When the auction gives up
/// and `fallback_exact` is set the exact solver is used regardless of size.
inline Matching emd(std::span<const Point3> src, std::span<const Point3> tgt,
                    std::size_t exact_threshold = kDefaultExactThreshold, bool fallback_exact = true,
                    GroundCost gc = GroundCost::Euclidean) {
  if (src.size() <= exact_threshold) return emd_exact(src, tgt, gc);
  try {
    return emd_approx(src, tgt, AuctionOptions{}, gc);
  } catch (const Error& e) {
    if (!fallback_exact || e.kind() != ErrorKind::ApproximationFailed) throw;
    return emd_exact(src, tgt, gc);
  }
}

struct ChamferMatch {
  std::vector<std::size_t> src_to_tgt;  // nearest target of each source point
  std::vector<std::size_t> tgt_to_src;  // nearest source of each target point
  std::vector<double> src_dist2;
  std::vector<double> tgt_dist2;
  /// Sum-of-means of squared distances (same convention as l2_chamfer).
  double cost = 0.0;
};

inline ChamferMatch chamfer_match(std::span<const Point3> src, std::span<const Point3> tgt) {
  require(!src.empty() && !tgt.empty(), "chamfer matching needs non-empty clouds");
  ChamferMatch cm;
  const KdTree tgt_tree(tgt), src_tree(src);
  cm.src_to_tgt.resize(src.size());
  cm.src_dist2.resize(src.size());
  cm.tgt_to_src.resize(tgt.size());
  cm.tgt_dist2.resize(tgt.size());
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Neighbor nb = tgt_tree.nearest(src[i]);
    cm.src_to_tgt[i] = nb.index;
    cm.src_dist2[i] = nb.dist2;
    a += nb.dist2;
  }
  for (std::size_t j = 0; j < tgt.size(); ++j) {
    const Neighbor nb = src_tree.nearest(tgt[j]);
    cm.tgt_to_src[j] = nb.index;
    cm.tgt_dist2[j] = nb.dist2;
    b += nb.dist2;
  }
  cm.cost = a / static_cast<double>(src.size()) + b / static_cast<double>(tgt.size());
  return cm;
}

inline ChamferMatch chamfer_match(const PointCloud& src, const PointCloud& tgt) {
  return chamfer_match(std::span<const Point3>(src.points), std::span<const Point3>(tgt.points));
}

}  // namespace n2n
