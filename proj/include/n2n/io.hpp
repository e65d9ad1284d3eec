#pragma once

// Point cloud files: XYZ text and PLY (ascii / binary_little_endian).

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "n2n/core.hpp"

namespace n2n::io {

static_assert(std::endian::native == std::endian::little, "binary readers assume a little-endian host");

inline std::string lower_extension(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

// ---------------------------------------------------------------------------
// XYZ
// ---------------------------------------------------------------------------

/// One point per line, whitespace separated. Lines with six numbers carry a
/// normal. Blank lines and '#' comments are skipped.
inline PointCloud read_xyz(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  PointCloud cloud;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    std::vector<double> v;
    double x;
    while (ss >> x) v.push_back(x);
    if (!ss.eof()) fail(ErrorKind::CorruptFile, path.string() + ":" + std::to_string(lineno) + ": not a number");
    if (v.empty()) continue;
    if (v.size() != 3 && v.size() != 6)
      fail(ErrorKind::CorruptFile, path.string() + ":" + std::to_string(lineno) + ": expected 3 or 6 values");
    cloud.points.emplace_back(v[0], v[1], v[2]);
    if (v.size() == 6) cloud.normals.emplace_back(v[3], v[4], v[5]);
  }
  if (!cloud.normals.empty() && cloud.normals.size() != cloud.points.size())
    fail(ErrorKind::CorruptFile, path.string() + ": normals present on only some lines");
  return cloud;
}

inline void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.precision(17);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud[i];
    out << p.x() << ' ' << p.y() << ' ' << p.z();
    if (cloud.has_normals()) out << ' ' << cloud.normals[i].x() << ' ' << cloud.normals[i].y() << ' ' << cloud.normals[i].z();
    out << '\n';
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// PLY
// ---------------------------------------------------------------------------

namespace detail {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

inline PlyType parse_ply_type(const std::string& t) {
  if (t == "char" || t == "int8") return PlyType::Int8;
  if (t == "uchar" || t == "uint8") return PlyType::UInt8;
  if (t == "short" || t == "int16") return PlyType::Int16;
  if (t == "ushort" || t == "uint16") return PlyType::UInt16;
  if (t == "int" || t == "int32") return PlyType::Int32;
  if (t == "uint" || t == "uint32") return PlyType::UInt32;
  if (t == "float" || t == "float32") return PlyType::Float32;
  if (t == "double" || t == "float64") return PlyType::Float64;
  fail(ErrorKind::CorruptFile, "unknown PLY property type '" + t + "'");
}

inline std::size_t ply_type_size(PlyType t) {
  switch (t) {
    case PlyType::Int8: case PlyType::UInt8: return 1;
    case PlyType::Int16: case PlyType::UInt16: return 2;
    case PlyType::Int32: case PlyType::UInt32: case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 0;
}

template <typename T>
T load_le(const char* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

inline double decode(PlyType t, const char* p) {
  switch (t) {
    case PlyType::Int8: return load_le<std::int8_t>(p);
    case PlyType::UInt8: return load_le<std::uint8_t>(p);
    case PlyType::Int16: return load_le<std::int16_t>(p);
    case PlyType::UInt16: return load_le<std::uint16_t>(p);
    case PlyType::Int32: return load_le<std::int32_t>(p);
    case PlyType::UInt32: return load_le<std::uint32_t>(p);
    case PlyType::Float32: return load_le<float>(p);
    case PlyType::Float64: return load_le<double>(p);
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::Float32;
  bool is_list = false;
  PlyType count_type = PlyType::UInt8;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> props;
};

enum class PlyFormat { Ascii, BinaryLE };

struct PlyHeader {
  PlyFormat format = PlyFormat::Ascii;
  std::vector<PlyElement> elements;
};

inline PlyHeader read_ply_header(std::istream& in, const std::string& name) {
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply") fail(ErrorKind::CorruptFile, name + ": missing 'ply' magic");
  PlyHeader h;
  bool saw_format = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string kw;
    ss >> kw;
    if (kw == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt == "ascii") h.format = PlyFormat::Ascii;
      else if (fmt == "binary_little_endian") h.format = PlyFormat::BinaryLE;
      else fail(ErrorKind::UnsupportedVersion, name + ": unsupported PLY format '" + fmt + "'");
      saw_format = true;
    } else if (kw == "element") {
      PlyElement e;
      ss >> e.name >> e.count;
      if (!ss) fail(ErrorKind::CorruptFile, name + ": bad element line");
      h.elements.push_back(std::move(e));
    } else if (kw == "property") {
      if (h.elements.empty()) fail(ErrorKind::CorruptFile, name + ": property before element");
      PlyProperty p;
      std::string t;
      ss >> t;
      if (t == "list") {
        std::string ct, it;
        ss >> ct >> it >> p.name;
        p.is_list = true;
        p.count_type = parse_ply_type(ct);
        p.type = parse_ply_type(it);
      } else {
        p.type = parse_ply_type(t);
        ss >> p.name;
      }
      h.elements.back().props.push_back(std::move(p));
    } else if (kw == "end_header") {
      if (!saw_format) fail(ErrorKind::CorruptFile, name + ": missing format line");
      return h;
    }
    // comment / obj_info lines are ignored
  }
  fail(ErrorKind::CorruptFile, name + ": header not terminated");
}

}  // namespace detail

/// Reads the vertex element of a PLY file (x/y/z and optional nx/ny/nz of any
/// scalar type). Other elements are skipped.
inline PointCloud read_ply(const std::filesystem::path& path) {
  using namespace detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  const std::string name = path.string();
  const PlyHeader h = read_ply_header(in, name);

  PointCloud cloud;
  bool found_vertex = false;
  for (const auto& e : h.elements) {
    const bool is_vertex = e.name == "vertex";
    int ix = -1, iy = -1, iz = -1, inx = -1, iny = -1, inz = -1;
    for (int k = 0; k < static_cast<int>(e.props.size()); ++k) {
      const auto& n = e.props[k].name;
      if (n == "x") ix = k;
      else if (n == "y") iy = k;
      else if (n == "z") iz = k;
      else if (n == "nx") inx = k;
      else if (n == "ny") iny = k;
      else if (n == "nz") inz = k;
    }
    const bool has_normals = inx >= 0 && iny >= 0 && inz >= 0;
    if (is_vertex) {
      if (ix < 0 || iy < 0 || iz < 0) fail(ErrorKind::CorruptFile, name + ": vertex element lacks x/y/z");
      found_vertex = true;
      cloud.points.reserve(e.count);
      if (has_normals) cloud.normals.reserve(e.count);
    }

    std::vector<double> vals(e.props.size());
    for (std::size_t r = 0; r < e.count; ++r) {
      if (h.format == PlyFormat::Ascii) {
        std::string line;
        do {
          if (!std::getline(in, line)) fail(ErrorKind::CorruptFile, name + ": truncated ascii body");
        } while (line.find_first_not_of(" \t\r") == std::string::npos);
        std::istringstream ss(line);
        for (std::size_t k = 0; k < e.props.size(); ++k) {
          if (e.props[k].is_list) {
            std::size_t cnt;
            ss >> cnt;
            double skip;
            for (std::size_t c = 0; c < cnt; ++c) ss >> skip;
          } else {
            ss >> vals[k];
          }
          if (!ss) fail(ErrorKind::CorruptFile, name + ": malformed ascii row");
        }
      } else {
        char buf[8];
        for (std::size_t k = 0; k < e.props.size(); ++k) {
          const auto& p = e.props[k];
          if (p.is_list) {
            if (!in.read(buf, static_cast<std::streamsize>(ply_type_size(p.count_type))))
              fail(ErrorKind::CorruptFile, name + ": truncated binary body");
            const auto cnt = static_cast<std::size_t>(decode(p.count_type, buf));
            in.ignore(static_cast<std::streamsize>(cnt * ply_type_size(p.type)));
          } else {
            if (!in.read(buf, static_cast<std::streamsize>(ply_type_size(p.type))))
              fail(ErrorKind::CorruptFile, name + ": truncated binary body");
            vals[k] = decode(p.type, buf);
          }
        }
        if (!in) fail(ErrorKind::CorruptFile, name + ": truncated binary body");
      }
      if (is_vertex) {
        cloud.points.emplace_back(vals[ix], vals[iy], vals[iz]);
        if (has_normals) cloud.normals.emplace_back(vals[inx], vals[iny], vals[inz]);
      }
    }
  }
  if (!found_vertex) fail(ErrorKind::CorruptFile, name + ": no vertex element");
  return cloud;
}

enum class PlyEncoding { Ascii, BinaryLE };

inline void write_ply(const std::filesystem::path& path, const PointCloud& cloud,
                      PlyEncoding enc = PlyEncoding::BinaryLE) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "ply\nformat " << (enc == PlyEncoding::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n";
  out << "element vertex " << cloud.size() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (cloud.has_normals()) out << "property float nx\nproperty float ny\nproperty float nz\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    float v[6];
    for (int a = 0; a < 3; ++a) v[a] = static_cast<float>(cloud[i][a]);
    const int n = cloud.has_normals() ? 6 : 3;
    if (n == 6)
      for (int a = 0; a < 3; ++a) v[3 + a] = static_cast<float>(cloud.normals[i][a]);
    if (enc == PlyEncoding::Ascii) {
      out.precision(9);
      for (int a = 0; a < n; ++a) out << (a ? " " : "") << v[a];
      out << '\n';
    } else {
      out.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(n * sizeof(float)));
    }
  }
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

/// Dispatches on extension: .ply, otherwise XYZ text.
inline PointCloud read_cloud(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "no such file: " + path.string());
  return lower_extension(path) == ".ply" ? read_ply(path) : read_xyz(path);
}

inline void write_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  if (lower_extension(path) == ".ply") write_ply(path, cloud);
  else write_xyz(path, cloud);
}

}  // namespace n2n::io
