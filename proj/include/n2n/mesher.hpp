#pragma once

// Marching cubes over a ScalarGrid, mesh I/O and exact point-to-mesh
// distance.
//
// Cells are polygonized from their face contours: on each of the six faces
// the crossings are joined by segments (ambiguous faces are split with the
// bilinear saddle value), the segments are chained into closed loops and each
// loop is triangulated as a fan. Neighbouring cells therefore always agree on the
// shared face, which keeps the mesh closed wherever the surface does not
// leave the grid.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "n2n/core.hpp"
#include "n2n/field.hpp"

namespace n2n {

struct TriangleMesh {
  std::vector<Point3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
  std::vector<Point3> vertex_normals;

  bool empty() const { return triangles.empty(); }
  std::size_t num_vertices() const { return vertices.size(); }
  std::size_t num_triangles() const { return triangles.size(); }
};

struct Isosurface {
  TriangleMesh mesh;
  /// True when the level never crosses the grid values and the mesh is empty.
  bool empty_mesh = false;
};

namespace detail {

// Corner c of a cell sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
// Faces list their corners counter-clockwise as seen from outside the cell.
inline constexpr std::array<std::array<int, 4>, 6> kCellFaces = {{
    {0, 4, 6, 2},  // -x
    {1, 3, 7, 5},  // +x
    {0, 1, 5, 4},  // -y
    {2, 6, 7, 3},  // +y
    {0, 2, 3, 1},  // -z
    {4, 5, 7, 6},  // +z
}};

// Edge e joins corners kCellEdges[e][0] < kCellEdges[e][1].
inline constexpr std::array<std::array<int, 2>, 12> kCellEdges = {{
    {0, 1}, {2, 3}, {4, 5}, {6, 7},  // along x
    {0, 2}, {1, 3}, {4, 6}, {5, 7},  // along y
    {0, 4}, {1, 5}, {2, 6}, {3, 7},  // along z
}};

inline int cell_edge(int a, int b) {
  if (a > b) std::swap(a, b);
  for (int e = 0; e < 12; ++e)
    if (kCellEdges[e][0] == a && kCellEdges[e][1] == b) return e;
  return -1;
}

inline const std::array<std::array<int, 8>, 8>& edge_lookup() {
  static const auto table = [] {
    std::array<std::array<int, 8>, 8> t{};
    for (int a = 0; a < 8; ++a)
      for (int b = 0; b < 8; ++b) t[a][b] = cell_edge(a, b);
    return t;
  }();
  return table;
}

// Central differences inside the grid, one-sided at the border.
inline Point3 grid_gradient(const ScalarGrid& g, int x, int y, int z) {
  const Point3 h = g.spacing();
  const int r = g.resolution;
  auto diff = [&](int axis) {
    std::array<int, 3> lo{x, y, z}, hi{x, y, z};
    lo[axis] = std::max(0, lo[axis] - 1);
    hi[axis] = std::min(r - 1, hi[axis] + 1);
    return (g.at(hi[0], hi[1], hi[2]) - g.at(lo[0], lo[1], lo[2])) / (h[axis] * (hi[axis] - lo[axis]));
  };
  return {diff(0), diff(1), diff(2)};
}

}  // namespace detail

/// Extracts the level set f = level with normals pointing towards increasing
/// f, i.e. outward for fields that are negative inside.
inline Isosurface marching_cubes(const ScalarGrid& grid, double level = 0.0) {
  require(grid.resolution >= 2, "grid resolution must be >= 2");
  require(grid.values.size() == static_cast<std::size_t>(grid.resolution) * grid.resolution * grid.resolution,
          "grid value count does not match its resolution");
  require(std::isfinite(level), "iso level must be finite");
  Isosurface out;
  const auto [lo, hi] = std::minmax_element(grid.values.begin(), grid.values.end());
  if (level < *lo || level > *hi) {
    out.empty_mesh = true;
    return out;
  }

  // Corners exactly on the level are nudged upwards so that no crossing lands
  // on a lattice point.
  double nudged = level + 1e-12;
  if (nudged == level) nudged = std::nextafter(level, std::numeric_limits<double>::infinity());
  auto value = [&](int x, int y, int z) {
    const double v = grid.at(x, y, z);
    return v == level ? nudged : v;
  };

  const int r = grid.resolution;
  const auto& edge_of = detail::edge_lookup();
  std::array<int, 12> edge_faces{};  // bit f set when the edge borders face f
  for (int f = 0; f < 6; ++f)
    for (int k = 0; k < 4; ++k) edge_faces[edge_of[detail::kCellFaces[f][k]][detail::kCellFaces[f][(k + 1) % 4]]] |= 1 << f;
  TriangleMesh& mesh = out.mesh;
  std::unordered_map<std::uint64_t, std::uint32_t> weld;

  auto vertex_for = [&](int x, int y, int z, int e, const std::array<double, 8>& v) -> std::uint32_t {
    const int a = detail::kCellEdges[e][0], b = detail::kCellEdges[e][1];
    const int ax = x + (a & 1), ay = y + ((a >> 1) & 1), az = z + ((a >> 2) & 1);
    const int axis = e / 4;
    const std::uint64_t key = 3 * static_cast<std::uint64_t>(grid.index(ax, ay, az)) + static_cast<std::uint64_t>(axis);
    const auto it = weld.find(key);
    if (it != weld.end()) return it->second;
    const double t = (level - v[a]) / (v[b] - v[a]);
    const int bx = x + (b & 1), by = y + ((b >> 1) & 1), bz = z + ((b >> 2) & 1);
    const Point3 pa = grid.position(ax, ay, az), pb = grid.position(bx, by, bz);
    mesh.vertices.push_back(pa + t * (pb - pa));
    const Point3 n = (1.0 - t) * detail::grid_gradient(grid, ax, ay, az) + t * detail::grid_gradient(grid, bx, by, bz);
    mesh.vertex_normals.push_back(n);
    const auto id = static_cast<std::uint32_t>(mesh.vertices.size() - 1);
    weld.emplace(key, id);
    return id;
  };

  std::array<double, 8> v{};
  std::array<bool, 8> pos{};
  for (int z = 0; z + 1 < r; ++z) {
    for (int y = 0; y + 1 < r; ++y) {
      for (int x = 0; x + 1 < r; ++x) {
        int n_pos = 0;
        for (int c = 0; c < 8; ++c) {
          v[c] = value(x + (c & 1), y + ((c >> 1) & 1), z + ((c >> 2) & 1));
          pos[c] = v[c] > level;
          n_pos += pos[c];
        }
        if (n_pos == 0 || n_pos == 8) continue;

        // next[e]: the crossing that follows crossing e along its contour.
        std::array<int, 12> next;
        next.fill(-1);
        for (const auto& face : detail::kCellFaces) {
          std::array<int, 4> cross{};
          std::array<bool, 4> exits{};  // positive -> negative walking counter-clockwise
          int n = 0;
          for (int k = 0; k < 4; ++k) {
            const int a = face[k], b = face[(k + 1) % 4];
            if (pos[a] == pos[b]) continue;
            cross[n] = edge_of[a][b];
            exits[n] = pos[a];
            ++n;
          }
          if (n == 2) {
            const int s = exits[0] ? 0 : 1;
            next[cross[s]] = cross[1 - s];
          } else if (n == 4) {
            const double a = v[face[0]] - level, b = v[face[1]] - level, c = v[face[2]] - level,
                         d = v[face[3]] - level;
            const bool centre_pos = (a * c - b * d) / (a + c - b - d) > 0.0;
            for (int k = 0; k < 4; ++k)
              if (exits[k]) next[cross[k]] = cross[centre_pos ? (k + 1) % 4 : (k + 3) % 4];
          }
        }

        // Vertices are created in edge order so the numbering does not depend
        // on the direction the loops are walked.
        std::array<std::uint32_t, 12> vid{};
        for (int e = 0; e < 12; ++e)
          if (next[e] >= 0) vid[e] = vertex_for(x, y, z, e, v);
        std::array<bool, 12> seen{};
        std::array<std::uint32_t, 12> loop{};
        for (int e0 = 0; e0 < 12; ++e0) {
          if (next[e0] < 0 || seen[e0]) continue;
          std::array<int, 12> edges{};
          int len = 0;
          for (int e = e0; !seen[e]; e = next[e]) {
            seen[e] = true;
            edges[len] = e;
            loop[len++] = vid[e];
          }
          // A fan diagonal between two crossings of the same cell face would
          // also be chosen by the neighbouring cell, so fan from a vertex
          // without such diagonals, or from the loop centroid if none exists.
          int start = -1;
          for (int k = 0; k < len; ++k) {
            bool ok = true;
            for (int j = 0; j < len && ok; ++j) {
              const int gap = (j - k + len) % len;
              if (gap > 1 && gap < len - 1) ok = (edge_faces[edges[k]] & edge_faces[edges[j]]) == 0;
            }
            if (ok && (start < 0 || edges[k] < edges[start])) start = k;
          }
          auto emit = [&](std::uint32_t a, std::uint32_t b, std::uint32_t c) {
            const Point3 cr = (mesh.vertices[b] - mesh.vertices[a]).cross(mesh.vertices[c] - mesh.vertices[a]);
            if (cr.squaredNorm() > 0.0) mesh.triangles.push_back({a, b, c});
          };
          if (start >= 0) {
            for (int k = 1; k + 1 < len; ++k) emit(loop[start], loop[(start + k) % len], loop[(start + k + 1) % len]);
            continue;
          }
          Point3 c = Point3::Zero(), n = Point3::Zero();
          for (int e = 0; e < 12; ++e)
            if (std::find(edges.begin(), edges.begin() + len, e) != edges.begin() + len) {
              c += mesh.vertices[vid[e]];
              n += mesh.vertex_normals[vid[e]];
            }
          mesh.vertices.push_back(c / len);
          mesh.vertex_normals.push_back(n);
          const auto centre = static_cast<std::uint32_t>(mesh.vertices.size() - 1);
          for (int k = 0; k < len; ++k) emit(centre, loop[k], loop[(k + 1) % len]);
        }
      }
    }
  }

  // Normalize the gradient normals; fall back to the area-weighted face
  // normal where the lattice gradient vanishes.
  std::vector<Point3> face_sum(mesh.vertices.size(), Point3::Zero());
  for (const auto& t : mesh.triangles) {
    const Point3 cr = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    for (auto i : t) face_sum[i] += cr;
  }
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    Point3& n = mesh.vertex_normals[i];
    if (n.norm() == 0.0 || !is_finite(n)) n = face_sum[i];
    n = n.norm() > 0.0 ? Point3(n.normalized()) : Point3::UnitZ();
  }
  out.empty_mesh = mesh.triangles.empty();
  return out;
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

/// Number of triangles incident to each undirected edge.
inline std::map<std::pair<std::uint32_t, std::uint32_t>, int> edge_incidence(const TriangleMesh& mesh) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> count;
  for (const auto& t : mesh.triangles)
    for (int k = 0; k < 3; ++k) {
      const auto a = t[k], b = t[(k + 1) % 3];
      ++count[{std::min(a, b), std::max(a, b)}];
    }
  return count;
}

/// Every edge is shared by exactly two triangles.
inline bool is_watertight(const TriangleMesh& mesh) {
  if (mesh.empty()) return false;
  for (const auto& [edge, n] : edge_incidence(mesh))
    if (n != 2) return false;
  return true;
}

/// V - E + F over the vertices referenced by triangles.
inline long euler_characteristic(const TriangleMesh& mesh) {
  std::vector<char> used(mesh.vertices.size(), 0);
  for (const auto& t : mesh.triangles)
    for (auto i : t) used[i] = 1;
  const long v = std::count(used.begin(), used.end(), 1);
  const long e = static_cast<long>(edge_incidence(mesh).size());
  return v - e + static_cast<long>(mesh.triangles.size());
}

inline double triangle_area(const TriangleMesh& mesh, std::size_t t) {
  const auto& tri = mesh.triangles[t];
  return 0.5 * (mesh.vertices[tri[1]] - mesh.vertices[tri[0]]).cross(mesh.vertices[tri[2]] - mesh.vertices[tri[0]]).norm();
}

// ---------------------------------------------------------------------------
// Point to mesh distance
// ---------------------------------------------------------------------------

/// Closest point on triangle abc to p (Ericson, Real-Time Collision
/// Detection, 5.1.5).
inline Point3 closest_point_on_triangle(const Point3& p, const Point3& a, const Point3& b, const Point3& c) {
  const Point3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Point3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;
  const Point3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

inline double point_triangle_dist2(const Point3& p, const TriangleMesh& mesh, std::size_t t) {
  const auto& tri = mesh.triangles[t];
  return (p - closest_point_on_triangle(p, mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]))
      .squaredNorm();
}

/// Bounding volume hierarchy over the triangles of a mesh.
class MeshBvh {
 public:
  explicit MeshBvh(const TriangleMesh& mesh) : mesh_(&mesh) {
    require(!mesh.empty(), "point to mesh distance needs a non-empty mesh");
    order_.resize(mesh.triangles.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    centroids_.resize(order_.size());
    for (std::size_t t = 0; t < order_.size(); ++t) {
      const auto& tri = mesh.triangles[t];
      centroids_[t] = (mesh.vertices[tri[0]] + mesh.vertices[tri[1]] + mesh.vertices[tri[2]]) / 3.0;
    }
    nodes_.reserve(2 * order_.size() / kLeaf + 2);
    build(0, order_.size());
  }

  /// Squared distance from p to the closest point of the mesh.
  double dist2(const Point3& p) const {
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::size_t> stack{0};
    while (!stack.empty()) {
      const Node& node = nodes_[stack.back()];
      stack.pop_back();
      if (box_dist2(node, p) > best) continue;
      if (node.left == 0) {
        for (std::size_t k = node.begin; k < node.end; ++k) best = std::min(best, point_triangle_dist2(p, *mesh_, order_[k]));
        continue;
      }
      const double dl = box_dist2(nodes_[node.left], p), dr = box_dist2(nodes_[node.right], p);
      // Visit the nearer child first (pushed last).
      if (dl <= dr) {
        stack.push_back(node.right);
        stack.push_back(node.left);
      } else {
        stack.push_back(node.left);
        stack.push_back(node.right);
      }
    }
    return best;
  }

  double distance(const Point3& p) const { return std::sqrt(dist2(p)); }

 private:
  static constexpr std::size_t kLeaf = 4;
  struct Node {
    Point3 lo, hi;
    std::size_t begin = 0, end = 0, left = 0, right = 0;
  };

  static double box_dist2(const Node& n, const Point3& p) {
    const Point3 d = (n.lo - p).cwiseMax(p - n.hi).cwiseMax(0.0);
    return d.squaredNorm();
  }

  std::size_t build(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({});
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo = Point3::Constant(std::numeric_limits<double>::infinity());
    node.hi = -node.lo;
    for (std::size_t k = begin; k < end; ++k)
      for (auto i : mesh_->triangles[order_[k]]) {
        node.lo = node.lo.cwiseMin(mesh_->vertices[i]);
        node.hi = node.hi.cwiseMax(mesh_->vertices[i]);
      }
    if (end - begin > kLeaf) {
      Point3 clo = Point3::Constant(std::numeric_limits<double>::infinity()), chi = -clo;
      for (std::size_t k = begin; k < end; ++k) {
        clo = clo.cwiseMin(centroids_[order_[k]]);
        chi = chi.cwiseMax(centroids_[order_[k]]);
      }
      Eigen::Index axis;
      (chi - clo).maxCoeff(&axis);
      const std::size_t mid = begin + (end - begin) / 2;
      std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                       order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t a, std::size_t b) {
                         return centroids_[a][axis] < centroids_[b][axis] ||
                                (centroids_[a][axis] == centroids_[b][axis] && a < b);
                       });
      node.left = build(begin, mid);
      node.right = build(mid, end);
    }
    nodes_[id] = node;
    return id;
  }

  const TriangleMesh* mesh_;
  std::vector<std::size_t> order_;
  std::vector<Point3> centroids_;
  std::vector<Node> nodes_;
};

inline double point_to_mesh_distance(const Point3& p, const TriangleMesh& mesh) {
  require(!mesh.empty(), "point to mesh distance needs a non-empty mesh");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) best = std::min(best, point_triangle_dist2(p, mesh, t));
  return std::sqrt(best);
}

// ---------------------------------------------------------------------------
// Mesh files
// ---------------------------------------------------------------------------

/// OBJ with v / vn / f lines and 1-based indices.
inline void write_obj(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(9);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& n : mesh.vertex_normals) out << "vn " << n.x() << ' ' << n.y() << ' ' << n.z() << '\n';
  const bool normals = mesh.vertex_normals.size() == mesh.vertices.size();
  for (const auto& t : mesh.triangles) {
    out << 'f';
    for (auto i : t) {
      out << ' ' << i + 1;
      if (normals) out << "//" << i + 1;
    }
    out << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

/// Reads the v / vn / f subset written by write_obj (polygons are fanned).
inline TriangleMesh read_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  TriangleMesh mesh;
  std::string line, tag;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    if (!(ss >> tag)) continue;
    if (tag == "v" || tag == "vn") {
      Point3 p;
      if (!(ss >> p.x() >> p.y() >> p.z())) fail(ErrorKind::CorruptFile, path.string() + ": bad line '" + line + "'");
      (tag == "v" ? mesh.vertices : mesh.vertex_normals).push_back(p);
    } else if (tag == "f") {
      std::vector<std::uint32_t> idx;
      std::string tok;
      while (ss >> tok) {
        const long i = std::stol(tok.substr(0, tok.find('/')));
        if (i < 1 || static_cast<std::size_t>(i) > mesh.vertices.size())
          fail(ErrorKind::CorruptFile, path.string() + ": face index out of range");
        idx.push_back(static_cast<std::uint32_t>(i - 1));
      }
      for (std::size_t k = 1; k + 1 < idx.size(); ++k) mesh.triangles.push_back({idx[0], idx[k], idx[k + 1]});
    }
  }
  if (mesh.vertex_normals.size() != mesh.vertices.size()) mesh.vertex_normals.clear();
  return mesh;
}

/// Binary little-endian PLY with float vertices, normals and uchar/int faces.
inline void write_mesh_ply(const std::filesystem::path& path, const TriangleMesh& mesh) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  const bool normals = mesh.vertex_normals.size() == mesh.vertices.size();
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << mesh.vertices.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (normals) out << "property float nx\nproperty float ny\nproperty float nz\n";
  out << "element face " << mesh.triangles.size() << "\nproperty list uchar int vertex_indices\nend_header\n";
  auto put = [&](auto value) { out.write(reinterpret_cast<const char*>(&value), sizeof(value)); };
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    for (int k = 0; k < 3; ++k) put(static_cast<float>(mesh.vertices[i][k]));
    if (normals)
      for (int k = 0; k < 3; ++k) put(static_cast<float>(mesh.vertex_normals[i][k]));
  }
  for (const auto& t : mesh.triangles) {
    put(static_cast<std::uint8_t>(3));
    for (auto i : t) put(static_cast<std::int32_t>(i));
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

inline void write_mesh(const std::filesystem::path& path, const TriangleMesh& mesh) {
  if (path.extension() == ".ply") write_mesh_ply(path, mesh);
  else if (path.extension() == ".obj") write_obj(path, mesh);
  else fail(ErrorKind::InvalidInput, "unsupported mesh extension: " + path.string());
}

}  // namespace n2n
