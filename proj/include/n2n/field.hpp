#pragma once

// Consumers of a signed distance field: point pulling (denoising,
// upsampling, level sets) and dense grid sampling.

#include <concepts>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "n2n/core.hpp"
#include "n2n/network.hpp"

namespace n2n {

/// Anything that can report values and input gradients for a batch of
/// queries (columns).
template <typename F>
concept ScalarField = requires(const F& f, const Eigen::Matrix3Xd& q) {
  { f.evaluate(q) } -> std::convertible_to<BatchEval>;
  { f.values(q) } -> std::convertible_to<Eigen::RowVectorXd>;
};

struct NetworkField {
  const SdfNetwork* net;
  explicit NetworkField(const SdfNetwork& n) : net(&n) {}
  BatchEval evaluate(const Eigen::Matrix3Xd& q) const { return n2n::evaluate(*net, q); }
  Eigen::RowVectorXd values(const Eigen::Matrix3Xd& q) const { return evaluate_values(*net, q); }
};

/// Exact signed distance to a sphere.
struct SphereField {
  Point3 center = Point3::Zero();
  double radius = 1.0;

  BatchEval evaluate(const Eigen::Matrix3Xd& q) const {
    BatchEval out{values(q), Eigen::Matrix3Xd(3, q.cols())};
    for (Eigen::Index i = 0; i < q.cols(); ++i) {
      const Point3 d = q.col(i) - center;
      const double n = d.norm();
      out.gradients.col(i) = n > 0 ? Point3(d / n) : Point3::UnitX();
    }
    return out;
  }
  Eigen::RowVectorXd values(const Eigen::Matrix3Xd& q) const {
    Eigen::RowVectorXd v(q.cols());
    for (Eigen::Index i = 0; i < q.cols(); ++i) v(i) = (q.col(i) - center).norm() - radius;
    return v;
  }
};

/// Constant field (zero gradient).
struct ConstantField {
  double value = 0.0;
  BatchEval evaluate(const Eigen::Matrix3Xd& q) const {
    return {Eigen::RowVectorXd::Constant(q.cols(), value), Eigen::Matrix3Xd::Zero(3, q.cols())};
  }
  Eigen::RowVectorXd values(const Eigen::Matrix3Xd& q) const { return Eigen::RowVectorXd::Constant(q.cols(), value); }
};

inline constexpr std::size_t kFieldChunk = 4096;

/// Moves every point `passes` times along the normalized field gradient onto
/// the iso-surface f = level.
template <ScalarField F>
PointCloud level_set_points(const F& field, double level, const PointCloud& seeds, int passes = 1,
                            double grad_eps = 1e-8) {
  require(passes >= 1, "passes must be >= 1");
  PointCloud out;
  out.points = seeds.points;
  for (int pass = 0; pass < passes; ++pass) {
    for (std::size_t start = 0; start < out.size(); start += kFieldChunk) {
      const std::size_t n = std::min(kFieldChunk, out.size() - start);
      const Eigen::Matrix3Xd q = to_matrix(std::span<const Point3>(out.points).subspan(start, n));
      const BatchEval ev = field.evaluate(q);
      for (std::size_t k = 0; k < n; ++k) {
        const Eigen::Index ki = static_cast<Eigen::Index>(k);
        const Point3 g = ev.gradients.col(ki);
        out.points[start + k] = q.col(ki) - (ev.values(ki) - level) * g / std::max(g.norm(), grad_eps);
      }
    }
  }
  return out;
}

template <ScalarField F>
PointCloud denoise(const F& field, const PointCloud& noisy, int passes = 1) {
  return level_set_points(field, 0.0, noisy, passes);
}

inline PointCloud denoise(const SdfNetwork& net, const PointCloud& noisy, int passes = 1) {
  return denoise(NetworkField(net), noisy, passes);
}

inline PointCloud level_set_points(const SdfNetwork& net, double level, const PointCloud& seeds, int passes = 1) {
  return level_set_points(NetworkField(net), level, seeds, passes);
}

/// `rate` jittered copies of the sparse cloud, each pulled onto the surface.
/// Copy r is noised with seed stream r, so the output is ordered copy by copy.
template <ScalarField F>
PointCloud upsample(const F& field, const PointCloud& sparse, int rate, double sigma_fraction, std::uint64_t seed,
                    int passes = 1) {
  require(rate >= 1, "upsampling rate must be >= 1");
  require(!sparse.empty(), "cannot upsample an empty cloud");
  PointCloud out;
  out.points.reserve(sparse.size() * static_cast<std::size_t>(rate));
  for (int r = 0; r < rate; ++r) {
    PointCloud jittered = add_gaussian_noise(sparse, sigma_fraction, derive_seed(seed, streams::kUpsample + r));
    jittered.normals.clear();
    const PointCloud pulled = denoise(field, jittered, passes);
    out.points.insert(out.points.end(), pulled.points.begin(), pulled.points.end());
  }
  return out;
}

inline PointCloud upsample(const SdfNetwork& net, const PointCloud& sparse, int rate, double sigma_fraction,
                           std::uint64_t seed, int passes = 1) {
  return upsample(NetworkField(net), sparse, rate, sigma_fraction, seed, passes);
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

struct Box {
  Point3 min = Point3::Constant(-1.1);
  Point3 max = Point3::Constant(1.1);
};

/// resolution^3 samples on the corner lattice of `bounds`, x fastest:
/// index = x + res * (y + res * z).
struct ScalarGrid {
  int resolution = 0;
  Box bounds;
  std::vector<double> values;

  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(resolution) * (static_cast<std::size_t>(y) + static_cast<std::size_t>(resolution) * z);
  }
  double at(int x, int y, int z) const { return values[index(x, y, z)]; }
  Point3 spacing() const { return (bounds.max - bounds.min) / static_cast<double>(resolution - 1); }
  Point3 position(int x, int y, int z) const {
    return bounds.min + spacing().cwiseProduct(Point3(x, y, z));
  }
};

template <ScalarField F>
ScalarGrid evaluate_grid(const F& field, int resolution, const Box& bounds = {}) {
  require(resolution >= 2, "grid resolution must be >= 2");
  require((bounds.max - bounds.min).minCoeff() > 0.0, "grid bounds must have positive extent");
  ScalarGrid g;
  g.resolution = resolution;
  g.bounds = bounds;
  const std::size_t total = static_cast<std::size_t>(resolution) * resolution * resolution;
  g.values.resize(total);
  Eigen::Matrix3Xd q(3, static_cast<Eigen::Index>(std::min(total, kFieldChunk)));
  for (std::size_t start = 0; start < total; start += kFieldChunk) {
    const std::size_t n = std::min(kFieldChunk, total - start);
    q.resize(3, static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t idx = start + k;
      const int x = static_cast<int>(idx % resolution);
      const int y = static_cast<int>((idx / resolution) % resolution);
      const int z = static_cast<int>(idx / (static_cast<std::size_t>(resolution) * resolution));
      q.col(static_cast<Eigen::Index>(k)) = g.position(x, y, z);
    }
    const Eigen::RowVectorXd v = field.values(q);
    for (std::size_t k = 0; k < n; ++k) g.values[start + k] = v(static_cast<Eigen::Index>(k));
  }
  return g;
}

inline ScalarGrid evaluate_grid(const SdfNetwork& net, int resolution, const Box& bounds = {}) {
  return evaluate_grid(NetworkField(net), resolution, bounds);
}

/// Text header followed by resolution^3 little-endian float32 values:
///
///   N2NGRID 1
///   resolution <r>
///   bounds <xmin> <ymin> <zmin> <xmax> <ymax> <zmax>
///   end_header
inline void write_grid(const std::filesystem::path& path, const ScalarGrid& g) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(17);
  out << "N2NGRID 1\nresolution " << g.resolution << "\nbounds " << g.bounds.min.x() << ' ' << g.bounds.min.y() << ' '
      << g.bounds.min.z() << ' ' << g.bounds.max.x() << ' ' << g.bounds.max.y() << ' ' << g.bounds.max.z()
      << "\nend_header\n";
  for (double v : g.values) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), sizeof(float));
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

inline ScalarGrid read_grid(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  ScalarGrid g;
  std::string line, kw;
  int version = 0;
  if (!std::getline(in, line) || (std::istringstream(line) >> kw >> version, kw != "N2NGRID"))
    fail(ErrorKind::CorruptFile, path.string() + ": not a grid file");
  if (version != 1) fail(ErrorKind::UnsupportedVersion, path.string() + ": grid version " + std::to_string(version));
  while (std::getline(in, line) && line != "end_header") {
    std::istringstream ss(line);
    ss >> kw;
    if (kw == "resolution") ss >> g.resolution;
    else if (kw == "bounds")
      ss >> g.bounds.min.x() >> g.bounds.min.y() >> g.bounds.min.z() >> g.bounds.max.x() >> g.bounds.max.y() >>
          g.bounds.max.z();
  }
  if (g.resolution < 2) fail(ErrorKind::CorruptFile, path.string() + ": bad resolution");
  const std::size_t total = static_cast<std::size_t>(g.resolution) * g.resolution * g.resolution;
  std::vector<float> raw(total);
  if (!in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(total * sizeof(float))))
    fail(ErrorKind::CorruptFile, path.string() + ": truncated grid body");
  g.values.assign(raw.begin(), raw.end());
  return g;
}

}  // namespace n2n
