#pragma once

// Synthetic clean shapes used by the demos and the acceptance suite.

#include <numbers>

#include "n2n/core.hpp"

namespace n2n::fixtures {

/// n points on the unit sphere along a Fibonacci spiral, with outward normals.
inline PointCloud sphere(std::size_t n, double radius = 1.0) {
  PointCloud c;
  c.points.reserve(n);
  c.normals.reserve(n);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(i);
    const Point3 u(r * std::cos(phi), r * std::sin(phi), z);
    c.points.push_back(radius * u);
    c.normals.push_back(u);
  }
  return c;
}

/// m evenly spaced points on the unit circle in the z = 0 plane.
inline PointCloud circle(std::size_t m, double radius = 1.0) {
  PointCloud c;
  c.points.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double t = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(m);
    c.points.emplace_back(radius * std::cos(t), radius * std::sin(t), 0.0);
  }
  return c;
}

}  // namespace n2n::fixtures
