#pragma once

#include <numeric>

#include "n2n/core.hpp"
#include "n2n/kdtree.hpp"

namespace n2n {

/// Per-point Gaussian scale for query sampling: the distance from each point
/// to its k-th nearest other point.
inline std::vector<double> knn_radii(const PointCloud& cloud, int k_neighbor) {
  require(k_neighbor >= 1 && static_cast<std::size_t>(k_neighbor) < cloud.size(),
          "k_neighbor must be in [1, |cloud|)");
  KdTree tree(cloud.points);
  std::vector<double> radii(cloud.size());
  const auto k = static_cast<std::size_t>(k_neighbor) + 1;  // the point itself comes back too
  for (std::size_t i = 0; i < cloud.size(); ++i) radii[i] = std::sqrt(tree.knn(cloud[i], k).back().dist2);
  return radii;
}

/// Draws queries around a fixed cloud. Radii are computed once so repeated
/// batches during training stay cheap.
class QuerySampler {
 public:
  QuerySampler(const PointCloud& cloud, int k_neighbor) : cloud_(&cloud), radii_(knn_radii(cloud, k_neighbor)) {}

  const std::vector<double>& radii() const { return radii_; }

  QueryBatch sample(std::size_t batch, Rng& rng) const {
    require(batch >= 1, "query batch must be positive");
    std::uniform_int_distribution<std::size_t> pick(0, cloud_->size() - 1);
    std::normal_distribution<double> gauss(0.0, 1.0);
    QueryBatch out;
    out.queries.reserve(batch);
    out.source_indices.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t parent = pick(rng);
      const double s = radii_[parent];
      const Point3 offset(gauss(rng), gauss(rng), gauss(rng));
      out.queries.push_back((*cloud_)[parent] + s * offset);
      out.source_indices.push_back(parent);
    }
    return out;
  }

 private:
  const PointCloud* cloud_;
  std::vector<double> radii_;
};

inline QueryBatch sample_queries(const PointCloud& cloud, int batch, int k_neighbor, std::uint64_t seed) {
  require(batch >= 1, "query batch must be positive");
  QuerySampler sampler(cloud, k_neighbor);
  Rng rng = make_rng(seed, streams::kQueries);
  return sampler.sample(static_cast<std::size_t>(batch), rng);
}

inline PointCloud sample_target_batch(const PointCloud& cloud, std::size_t batch, Rng& rng,
                                      bool with_replacement = true) {
  require(!cloud.empty(), "cannot sample targets from an empty cloud");
  require(batch >= 1, "target batch must be positive");
  PointCloud out;
  out.points.reserve(batch);
  if (with_replacement) {
    std::uniform_int_distribution<std::size_t> pick(0, cloud.size() - 1);
    for (std::size_t b = 0; b < batch; ++b) out.points.push_back(cloud[pick(rng)]);
    return out;
  }
  require(batch <= cloud.size(), "sampling without replacement needs batch <= |cloud|");
  std::vector<std::size_t> idx(cloud.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t b = 0; b < batch; ++b) {
    std::uniform_int_distribution<std::size_t> pick(b, idx.size() - 1);
    std::swap(idx[b], idx[pick(rng)]);
    out.points.push_back(cloud[idx[b]]);
  }
  return out;
}

inline PointCloud sample_target_batch(const PointCloud& cloud, int batch, std::uint64_t seed,
                                      bool with_replacement = true) {
  require(batch >= 1, "target batch must be positive");
  Rng rng = make_rng(seed, streams::kTargets);
  return sample_target_batch(cloud, static_cast<std::size_t>(batch), rng, with_replacement);
}

}  // namespace n2n
