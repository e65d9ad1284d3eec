#pragma once

// Geometric primitives, normalization, noise synthesis and the samplers that
// feed training batches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "n2n/error.hpp"

namespace n2n {

using Point3 = Eigen::Vector3d;

inline bool is_finite(const Point3& p) { return std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z()); }

struct PointCloud {
  std::vector<Point3> points;
  std::vector<Point3> normals;  // empty when absent

  PointCloud() = default;
  explicit PointCloud(std::vector<Point3> pts) : points(std::move(pts)) {}
  PointCloud(std::vector<Point3> pts, std::vector<Point3> nrm) : points(std::move(pts)), normals(std::move(nrm)) {}

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }
  const Point3& operator[](std::size_t i) const { return points[i]; }
  Point3& operator[](std::size_t i) { return points[i]; }
};

/// Checks the PointCloud invariants: non-empty, finite, and unit normals of
/// matching length when present.
inline void validate(const PointCloud& cloud) {
  require(!cloud.empty(), "point cloud is empty");
  for (const auto& p : cloud.points) require(is_finite(p), "point cloud contains a non-finite coordinate");
  if (cloud.has_normals()) {
    require(cloud.normals.size() == cloud.points.size(), "normal count does not match point count");
    for (const auto& n : cloud.normals) require(std::abs(n.norm() - 1.0) <= 1e-6, "normal is not unit length");
  }
}

struct NormalizationTransform {
  Point3 center = Point3::Zero();
  double scale = 1.0;

  Point3 apply(const Point3& p) const { return (p - center) / scale; }
  Point3 invert(const Point3& p) const { return p * scale + center; }

  PointCloud apply(const PointCloud& cloud) const {
    PointCloud out = cloud;
    for (auto& p : out.points) p = apply(p);
    return out;
  }
  PointCloud invert(const PointCloud& cloud) const {
    PointCloud out = cloud;
    for (auto& p : out.points) p = invert(p);
    return out;
  }
};

struct ObservationSet {
  std::vector<PointCloud> observations;
  NormalizationTransform normalization;

  std::size_t size() const { return observations.size(); }
};

struct QueryBatch {
  std::vector<Point3> queries;
  std::vector<std::size_t> source_indices;

  std::size_t size() const { return queries.size(); }
};

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based derivation: stream k of a seed is independent of how many
/// other streams were drawn before it.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) { return Rng(derive_seed(seed, stream)); }

// Seed streams used across the library. Kept distinct so that changing one
// sampler never perturbs another.
namespace streams {
inline constexpr std::uint64_t kNoise = 1;
inline constexpr std::uint64_t kObservation = 1000;  // + observation index
inline constexpr std::uint64_t kQueries = 2;
inline constexpr std::uint64_t kTargets = 3;
inline constexpr std::uint64_t kNetworkInit = 4;
inline constexpr std::uint64_t kTrainLoop = 5;
inline constexpr std::uint64_t kUpsample = 1000000;  // + copy index
inline constexpr std::uint64_t kSurfaceSample = 7;
inline constexpr std::uint64_t kFreePoints = 8;
}  // namespace streams

// ---------------------------------------------------------------------------
// Normalization and noise
// ---------------------------------------------------------------------------

inline Point3 centroid(std::span<const Point3> pts) {
  Point3 c = Point3::Zero();
  for (const auto& p : pts) c += p;
  return c / static_cast<double>(pts.size());
}

/// Centers the cloud on its centroid and scales it so the farthest point has
/// norm one. A single point (or all-coincident cloud) keeps scale 1.
inline std::pair<PointCloud, NormalizationTransform> normalize_to_unit_sphere(const PointCloud& cloud) {
  require(!cloud.empty(), "cannot normalize an empty cloud");
  NormalizationTransform t;
  t.center = centroid(cloud.points);
  double max_norm = 0.0;
  for (const auto& p : cloud.points) max_norm = std::max(max_norm, (p - t.center).norm());
  t.scale = max_norm > 0.0 ? max_norm : 1.0;
  return {t.apply(cloud), t};
}

enum class NoiseKind { Gaussian, Uniform };

/// Adds isotropic zero-mean noise with per-axis standard deviation
/// `sigma_fraction` (unit-sphere units). Uniform noise uses the same std.
inline PointCloud add_noise(const PointCloud& cloud, double sigma_fraction, std::uint64_t seed,
                            NoiseKind kind = NoiseKind::Gaussian) {
  require(sigma_fraction >= 0.0 && std::isfinite(sigma_fraction), "noise sigma must be non-negative");
  PointCloud out = cloud;
  if (sigma_fraction == 0.0) return out;
  Rng rng = make_rng(seed, streams::kNoise);
  if (kind == NoiseKind::Gaussian) {
    std::normal_distribution<double> gauss(0.0, sigma_fraction);
    for (auto& p : out.points) p += Point3(gauss(rng), gauss(rng), gauss(rng));
  } else {
    const double half = sigma_fraction * std::sqrt(3.0);
    std::uniform_real_distribution<double> uni(-half, half);
    for (auto& p : out.points) p += Point3(uni(rng), uni(rng), uni(rng));
  }
  return out;
}

inline PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma_fraction, std::uint64_t seed) {
  return add_noise(cloud, sigma_fraction, seed, NoiseKind::Gaussian);
}

/// Builds `n_obs` independently corrupted copies of an already normalized
/// clean cloud. Observation k uses seed stream k, so it can be regenerated
/// alone.
inline ObservationSet make_observation_set(const PointCloud& clean, int n_obs, double sigma_fraction,
                                           std::uint64_t seed, NoiseKind kind = NoiseKind::Gaussian) {
  require(n_obs >= 1, "need at least one observation");
  require(!clean.empty(), "clean cloud is empty");
  ObservationSet set;
  set.observations.reserve(static_cast<std::size_t>(n_obs));
  for (int k = 0; k < n_obs; ++k) {
    PointCloud obs = add_noise(clean, sigma_fraction, derive_seed(seed, streams::kObservation + k), kind);
    obs.normals.clear();
    set.observations.push_back(std::move(obs));
  }
  return set;
}

}  // namespace n2n
