#pragma once

// Network-free check of the noise-to-noise argument: a free point set G' is
// optimized directly against a set of noisy observations, and its residual to
// the clean cloud is compared between EMD and Chamfer objectives.
//
// Both objectives use squared distances. With the EMD assignment held fixed
// the minimizer of sum_i |g'_k - n_i,phi_i(k)|^2 is the mean of the matched
// points, so for a single clean point the optimum is the observation mean.

#include <filesystem>
#include <fstream>
#include <sstream>

#include "n2n/core.hpp"
#include "n2n/kdtree.hpp"
#include "n2n/metrics.hpp"
#include "n2n/trainer.hpp"
#include "n2n/transport.hpp"

namespace n2n {

struct FreePointOptions {
  Metric metric = Metric::Emd;
  int iterations = 100;
  double step = 0.5;
  /// The run fails once the objective exceeds this multiple of its initial value.
  double divergence_factor = 10.0;
};

struct FreePointResult {
  PointCloud points;
  std::vector<double> cost;  // objective before each update
  int iterations_run = 0;
};

namespace detail {

// Objective (mean over observations of a per-observation sum of squared
// distances) and its gradient w(k)^-1 * dJ/dg'_k, where w(k) counts how many
// terms involve g'_k on average. With step 1/2 this update moves every point
// to the minimizer of the objective for the current matching.
inline double free_point_step(const std::vector<Point3>& g, const ObservationSet& obs,
                              const std::vector<KdTree>& obs_trees, Metric metric, std::vector<Point3>& grad) {
  const std::size_t m = g.size();
  const double inv_n = 1.0 / static_cast<double>(obs.size());
  std::vector<double> weight(m, 0.0);
  std::fill(grad.begin(), grad.end(), Point3::Zero());
  double cost = 0.0;
  const KdTree g_tree(g);
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto& n = obs.observations[i].points;
    if (metric == Metric::Emd) {
      const Matching match = emd_exact(g, n, GroundCost::SquaredEuclidean);
      cost += inv_n * match.cost;
      for (std::size_t k = 0; k < m; ++k) {
        grad[k] += 2.0 * inv_n * (g[k] - n[match.assignment[k]]);
        weight[k] += inv_n;
      }
    } else {
      for (std::size_t k = 0; k < m; ++k) {
        const Neighbor nb = obs_trees[i].nearest(g[k]);
        cost += inv_n * nb.dist2;
        grad[k] += 2.0 * inv_n * (g[k] - n[nb.index]);
        weight[k] += inv_n;
      }
      for (std::size_t j = 0; j < n.size(); ++j) {
        const Neighbor nb = g_tree.nearest(n[j]);
        cost += inv_n * nb.dist2;
        grad[nb.index] += 2.0 * inv_n * (g[nb.index] - n[j]);
        weight[nb.index] += inv_n;
      }
    }
  }
  for (std::size_t k = 0; k < m; ++k) grad[k] /= weight[k];
  return cost;
}

}  // namespace detail

/// Gradient descent on G' starting from the first observation. The matching
/// (EMD) or nearest neighbours (CD) are recomputed every iteration; the run
/// stops early once an update leaves every point unchanged.
inline FreePointResult optimize_free_points(const ObservationSet& observations, const FreePointOptions& opt) {
  require(observations.size() >= 1, "need at least one observation");
  require(opt.iterations >= 1, "iterations must be >= 1");
  require(opt.step > 0.0, "step must be positive");
  const std::size_t m = observations.observations[0].size();
  require(m >= 1, "observations must be non-empty");
  for (const auto& o : observations.observations) require(o.size() == m, "observations must have equal sizes");

  std::vector<KdTree> trees;
  if (opt.metric == Metric::Chamfer)
    for (const auto& o : observations.observations) trees.emplace_back(o.points);

  FreePointResult res;
  std::vector<Point3> g = observations.observations[0].points, grad(m);
  for (int it = 0; it < opt.iterations; ++it) {
    const double cost = detail::free_point_step(g, observations, trees, opt.metric, grad);
    if (!std::isfinite(cost) || (!res.cost.empty() && cost > opt.divergence_factor * std::max(res.cost.front(), 1e-300)))
      fail(ErrorKind::NumericalFailure, "free point optimization diverged at iteration " + std::to_string(it));
    res.cost.push_back(cost);
    bool moved = false;
    for (std::size_t k = 0; k < m; ++k) {
      const Point3 next = g[k] - opt.step * grad[k];
      moved |= next != g[k];
      g[k] = next;
    }
    res.iterations_run = it + 1;
    if (!moved) break;
  }
  res.points.points = std::move(g);
  return res;
}

inline PointCloud optimize_free_points(const ObservationSet& observations, Metric metric, int iterations,
                                       double step = 0.5) {
  FreePointOptions opt;
  opt.metric = metric;
  opt.iterations = iterations;
  opt.step = step;
  return optimize_free_points(observations, opt).points;
}

// ---------------------------------------------------------------------------
// Convergence study
// ---------------------------------------------------------------------------

struct StudyRow {
  double sigma = 0.0;
  int n_obs = 0;
  Metric metric = Metric::Emd;
  double residual = 0.0;  // L2CD(G', clean)
  std::uint64_t seed = 0;
};

struct StudyConfig {
  std::vector<double> sigmas = {0.0, 0.01, 0.02, 0.05};
  std::vector<int> n_obs = {1, 10, 100};
  std::vector<Metric> metrics = {Metric::Emd, Metric::Chamfer};
  std::vector<std::uint64_t> seeds = {0};
  int iterations = 100;
  double step = 0.5;
};

/// Full factorial run over (seed, sigma, n_obs, metric).
inline std::vector<StudyRow> convergence_study(const PointCloud& clean, const StudyConfig& cfg) {
  require(!clean.empty(), "clean cloud is empty");
  require(!cfg.sigmas.empty() && !cfg.n_obs.empty() && !cfg.metrics.empty() && !cfg.seeds.empty(),
          "study grids must be non-empty");
  std::vector<StudyRow> rows;
  for (const auto seed : cfg.seeds)
    for (const double sigma : cfg.sigmas)
      for (const int n : cfg.n_obs) {
        const ObservationSet obs = make_observation_set(clean, n, sigma, derive_seed(seed, streams::kFreePoints));
        for (const Metric metric : cfg.metrics) {
          const PointCloud g = optimize_free_points(obs, metric, cfg.iterations, cfg.step);
          rows.push_back({sigma, n, metric, l2_chamfer(g, clean), seed});
        }
      }
  return rows;
}

inline std::string study_csv(const std::vector<StudyRow>& rows) {
  std::ostringstream out;
  out << "sigma,n_obs,metric,residual,seed\n";
  for (const auto& r : rows)
    out << detail::format_double(r.sigma) << ',' << r.n_obs << ',' << to_string(r.metric) << ','
        << detail::format_double(r.residual) << ',' << r.seed << '\n';
  return out.str();
}

inline void write_study_csv(const std::filesystem::path& path, const std::vector<StudyRow>& rows) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << study_csv(rows);
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace n2n
