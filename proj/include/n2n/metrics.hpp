#pragma once

// Evaluation metrics. Raw values are stored everywhere; the conventional
// table scalings (x10^4 for L2CD and P2M, x10 for L1CD) are applied only by
// format_report.
//
//   l2_chamfer  = mean_a min |a-b|^2 + mean_b min |b-a|^2
//   l1_chamfer  = (mean_a min |a-b| + mean_b min |b-a|) / 2
//   p2m         = mean over points of the squared distance to the mesh

#include <charconv>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "n2n/core.hpp"
#include "n2n/kdtree.hpp"
#include "n2n/mesher.hpp"
#include "n2n/transport.hpp"

namespace n2n {

inline double l2_chamfer(const PointCloud& a, const PointCloud& b) { return chamfer_match(a, b).cost; }

inline double l1_chamfer(const PointCloud& a, const PointCloud& b) {
  const ChamferMatch cm = chamfer_match(a, b);
  double sa = 0.0, sb = 0.0;
  for (double d2 : cm.src_dist2) sa += std::sqrt(d2);
  for (double d2 : cm.tgt_dist2) sb += std::sqrt(d2);
  return 0.5 * (sa / static_cast<double>(a.size()) + sb / static_cast<double>(b.size()));
}

inline double p2m(const PointCloud& points, const TriangleMesh& mesh) {
  require(!points.empty(), "p2m needs points");
  const MeshBvh bvh(mesh);
  double s = 0.0;
  for (const auto& p : points.points) s += bvh.dist2(p);
  return s / static_cast<double>(points.size());
}

/// Mean of |n_x . n_nn(x)| in each direction, averaged over both directions.
inline double normal_consistency(const PointCloud& a, const PointCloud& b) {
  require(a.has_normals() && b.has_normals(), "normal consistency needs normals on both clouds");
  const ChamferMatch cm = chamfer_match(a, b);
  double sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sa += std::abs(a.normals[i].dot(b.normals[cm.src_to_tgt[i]]));
  for (std::size_t j = 0; j < b.size(); ++j) sb += std::abs(b.normals[j].dot(a.normals[cm.tgt_to_src[j]]));
  return 0.5 * (sa / static_cast<double>(a.size()) + sb / static_cast<double>(b.size()));
}

inline constexpr double kDefaultFScoreTau = 0.01;

struct FScore {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

/// Precision: fraction of recon points within tau of gt. Recall: the converse.
inline FScore f_score_detail(const PointCloud& recon, const PointCloud& gt, double tau = kDefaultFScoreTau) {
  require(tau >= 0.0, "f-score threshold must be >= 0");
  const ChamferMatch cm = chamfer_match(recon, gt);
  const double t2 = tau * tau;
  FScore s;
  for (double d2 : cm.src_dist2) s.precision += d2 <= t2;
  for (double d2 : cm.tgt_dist2) s.recall += d2 <= t2;
  s.precision /= static_cast<double>(recon.size());
  s.recall /= static_cast<double>(gt.size());
  s.f = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
  return s;
}

inline double f_score(const PointCloud& recon, const PointCloud& gt, double tau = kDefaultFScoreTau) {
  return f_score_detail(recon, gt, tau).f;
}

inline constexpr std::size_t kDefaultSurfaceSamples = 100000;

/// Area-weighted uniform samples of the mesh surface. Normals interpolate the
/// vertex normals when present, else the face normal is used.
inline PointCloud sample_surface(const TriangleMesh& mesh, std::size_t n, std::uint64_t seed) {
  require(!mesh.empty(), "cannot sample an empty mesh");
  std::vector<double> area(mesh.triangles.size());
  for (std::size_t t = 0; t < area.size(); ++t) area[t] = triangle_area(mesh, t);
  std::discrete_distribution<std::size_t> pick(area.begin(), area.end());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Rng rng = make_rng(seed, streams::kSurfaceSample);
  const bool vn = mesh.vertex_normals.size() == mesh.vertices.size();
  PointCloud out;
  out.points.reserve(n);
  out.normals.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& tri = mesh.triangles[pick(rng)];
    double r1 = u(rng), r2 = u(rng);
    if (r1 + r2 > 1.0) r1 = 1.0 - r1, r2 = 1.0 - r2;
    const double r0 = 1.0 - r1 - r2;
    const Point3 &a = mesh.vertices[tri[0]], &b = mesh.vertices[tri[1]], &c = mesh.vertices[tri[2]];
    out.points.push_back(r0 * a + r1 * b + r2 * c);
    Point3 nrm = vn ? Point3(r0 * mesh.vertex_normals[tri[0]] + r1 * mesh.vertex_normals[tri[1]] +
                             r2 * mesh.vertex_normals[tri[2]])
                    : Point3((b - a).cross(c - a));
    if (nrm.norm() == 0.0) nrm = (b - a).cross(c - a);
    out.normals.push_back(nrm.normalized());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// A shape given as a cloud, a mesh, or both. Missing clouds are sampled from
/// the mesh.
struct EvalShape {
  PointCloud cloud;
  std::optional<TriangleMesh> mesh;
};

struct MetricsConfig {
  double tau = kDefaultFScoreTau;
  std::size_t surface_samples = kDefaultSurfaceSamples;
  std::uint64_t seed = 0;
};

/// Raw metric values. NaN marks a metric that could not be computed for the
/// given inputs (P2M without a reference mesh, NC without normals).
struct MetricsReport {
  double l2_chamfer = 0.0;
  double l1_chamfer = 0.0;
  double p2m = std::numeric_limits<double>::quiet_NaN();
  double normal_consistency = std::numeric_limits<double>::quiet_NaN();
  double f_score = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double tau = kDefaultFScoreTau;
  std::uint64_t recon_points = 0;
  std::uint64_t gt_points = 0;

  friend bool operator==(const MetricsReport& a, const MetricsReport& b);
};

namespace detail {

inline bool same_double(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) fail(ErrorKind::CorruptFile, "bad number '" + s + "'");
  return v;
}

inline const PointCloud& cloud_of(const EvalShape& s, const MetricsConfig& cfg, PointCloud& storage) {
  if (!s.cloud.empty()) return s.cloud;
  require(s.mesh.has_value() && !s.mesh->empty(), "shape needs a cloud or a non-empty mesh");
  storage = sample_surface(*s.mesh, cfg.surface_samples, cfg.seed);
  return storage;
}

}  // namespace detail

inline bool operator==(const MetricsReport& a, const MetricsReport& b) {
  using detail::same_double;
  return same_double(a.l2_chamfer, b.l2_chamfer) && same_double(a.l1_chamfer, b.l1_chamfer) &&
         same_double(a.p2m, b.p2m) && same_double(a.normal_consistency, b.normal_consistency) &&
         same_double(a.f_score, b.f_score) && same_double(a.precision, b.precision) &&
         same_double(a.recall, b.recall) && same_double(a.tau, b.tau) && a.recon_points == b.recon_points &&
         a.gt_points == b.gt_points;
}

inline MetricsReport evaluate_report(const EvalShape& recon, const EvalShape& gt, const MetricsConfig& cfg = {}) {
  PointCloud rs, gs;
  const PointCloud& r = detail::cloud_of(recon, cfg, rs);
  const PointCloud& g = detail::cloud_of(gt, cfg, gs);
  MetricsReport m;
  m.l2_chamfer = l2_chamfer(r, g);
  m.l1_chamfer = l1_chamfer(r, g);
  if (gt.mesh && !gt.mesh->empty()) m.p2m = p2m(r, *gt.mesh);
  if (r.has_normals() && g.has_normals()) m.normal_consistency = normal_consistency(r, g);
  const FScore fs = f_score_detail(r, g, cfg.tau);
  m.f_score = fs.f;
  m.precision = fs.precision;
  m.recall = fs.recall;
  m.tau = cfg.tau;
  m.recon_points = r.size();
  m.gt_points = g.size();
  return m;
}

inline std::vector<std::pair<std::string, std::string>> report_fields(const MetricsReport& m) {
  using detail::format_double;
  return {{"l2_chamfer", format_double(m.l2_chamfer)},
          {"l1_chamfer", format_double(m.l1_chamfer)},
          {"p2m", format_double(m.p2m)},
          {"normal_consistency", format_double(m.normal_consistency)},
          {"f_score", format_double(m.f_score)},
          {"precision", format_double(m.precision)},
          {"recall", format_double(m.recall)},
          {"tau", format_double(m.tau)},
          {"recon_points", std::to_string(m.recon_points)},
          {"gt_points", std::to_string(m.gt_points)}};
}

/// One key=value line per metric, shortest round-trip decimal form.
inline std::string to_key_value(const MetricsReport& m) {
  std::string out;
  for (const auto& [k, v] : report_fields(m)) out += k + "=" + v + "\n";
  return out;
}

inline MetricsReport parse_key_value(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorKind::CorruptFile, "expected key=value, got '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* key) -> const std::string& {
    const auto it = kv.find(key);
    if (it == kv.end()) fail(ErrorKind::CorruptFile, std::string("metrics report lacks ") + key);
    return it->second;
  };
  MetricsReport m;
  m.l2_chamfer = detail::parse_double(get("l2_chamfer"));
  m.l1_chamfer = detail::parse_double(get("l1_chamfer"));
  m.p2m = detail::parse_double(get("p2m"));
  m.normal_consistency = detail::parse_double(get("normal_consistency"));
  m.f_score = detail::parse_double(get("f_score"));
  m.precision = detail::parse_double(get("precision"));
  m.recall = detail::parse_double(get("recall"));
  m.tau = detail::parse_double(get("tau"));
  m.recon_points = std::stoull(get("recon_points"));
  m.gt_points = std::stoull(get("gt_points"));
  return m;
}

inline std::string csv_header() {
  std::string out;
  for (const auto& [k, v] : report_fields(MetricsReport{})) out += (out.empty() ? "" : ",") + k;
  return out;
}

inline std::string to_csv_row(const MetricsReport& m) {
  std::string out;
  bool first = true;
  for (const auto& [k, v] : report_fields(m)) {
    out += (first ? "" : ",") + v;
    first = false;
  }
  return out;
}

inline void write_report(const std::filesystem::path& path, const MetricsReport& m) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << to_key_value(m);
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

inline MetricsReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_value(ss.str());
}

/// Human-readable summary in the usual table units.
inline std::string format_report(const MetricsReport& m) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(3);
  out << "L2CD x1e4  " << m.l2_chamfer * 1e4 << "\n"
      << "L1CD x10   " << m.l1_chamfer * 10 << "\n"
      << "P2M x1e4   " << m.p2m * 1e4 << "\n"
      << "NC         " << m.normal_consistency << "\n"
      << "F-score    " << m.f_score << " (tau " << m.tau << ")\n";
  return out.str();
}

}  // namespace n2n
