#pragma once

#include "splatrig/core.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace splatrig {

// ---------------------------------------------------------------------------
// Scan point clouds as PLY (ascii or binary_little_endian). Recognized vertex
// properties: x/y/z (required), confidence (optional float), keep (optional
// uchar/int mask). Unknown properties are skipped. Coordinates are in mm.
// ---------------------------------------------------------------------------

struct ScanCloud {
  std::vector<Vec3> points;       // mm
  std::vector<double> confidence; // empty or per point
  std::vector<uint8_t> keep;      // empty or per point

  void validate() const {
    if (points.size() < 3)
      throw ValidationError("scan needs at least 3 points");
    for (const Vec3& p : points)
      if (!p.allFinite()) throw ValidationError("scan has non-finite points");
    if (!confidence.empty() && confidence.size() != points.size())
      throw ValidationError("scan confidence count mismatch");
    if (!keep.empty() && keep.size() != points.size())
      throw ValidationError("scan keep-mask count mismatch");
  }

  /// Applies the keep mask (and drops it); no-op when absent.
  void filter_kept() {
    if (keep.empty()) return;
    std::vector<Vec3> pts;
    std::vector<double> conf;
    for (size_t i = 0; i < points.size(); ++i) {
      if (!keep[i]) continue;
      pts.push_back(points[i]);
      if (!confidence.empty()) conf.push_back(confidence[i]);
    }
    points = std::move(pts);
    confidence = std::move(conf);
    keep.clear();
  }
};

namespace ply_detail {

struct Property {
  std::string name;
  std::string type;
};

inline size_t type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" ||
      t == "float" || t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw ValidationError("unsupported ply property type: " + t);
}

inline double decode(const std::string& t, const uint8_t* p) {
  if (t == "float" || t == "float32") {
    float v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (t == "double" || t == "float64") {
    double v;
    std::memcpy(&v, p, 8);
    return v;
  }
  if (t == "uchar" || t == "uint8") return *p;
  if (t == "char" || t == "int8") return *reinterpret_cast<const int8_t*>(p);
  if (t == "int" || t == "int32") {
    int32_t v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (t == "uint" || t == "uint32") {
    uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
  }
  if (t == "short" || t == "int16") {
    int16_t v;
    std::memcpy(&v, p, 2);
    return v;
  }
  if (t == "ushort" || t == "uint16") {
    uint16_t v;
    std::memcpy(&v, p, 2);
    return v;
  }
  throw ValidationError("unsupported ply property type: " + t);
}

}  // namespace ply_detail

inline ScanCloud load_ply(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RunError("cannot read " + path);

  std::string line;
  if (!std::getline(f, line) || line.substr(0, 3) != "ply")
    throw ValidationError(path + ": not a ply file");

  bool binary = false;
  size_t n_vertex = 0;
  std::vector<ply_detail::Property> props;
  bool in_vertex_element = false;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "ascii") binary = false;
      else if (fmt == "binary_little_endian") binary = true;
      else throw ValidationError(path + ": unsupported ply format " + fmt);
    } else if (tok == "element") {
      std::string name;
      size_t count;
      ls >> name >> count;
      in_vertex_element = (name == "vertex");
      if (in_vertex_element) n_vertex = count;
      else if (count > 0)
        throw ValidationError(path + ": only vertex elements supported");
    } else if (tok == "property" && in_vertex_element) {
      ply_detail::Property p;
      ls >> p.type >> p.name;
      if (p.type == "list")
        throw ValidationError(path + ": list properties not supported");
      props.push_back(p);
    } else if (tok == "end_header") {
      break;
    }
  }
  if (n_vertex == 0) throw ValidationError(path + ": no vertices");

  int ix = -1, iy = -1, iz = -1, iconf = -1, ikeep = -1;
  for (size_t i = 0; i < props.size(); ++i) {
    if (props[i].name == "x") ix = static_cast<int>(i);
    else if (props[i].name == "y") iy = static_cast<int>(i);
    else if (props[i].name == "z") iz = static_cast<int>(i);
    else if (props[i].name == "confidence") iconf = static_cast<int>(i);
    else if (props[i].name == "keep") ikeep = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0)
    throw ValidationError(path + ": ply lacks x/y/z properties");

  ScanCloud cloud;
  cloud.points.reserve(n_vertex);
  std::vector<double> row(props.size());
  if (binary) {
    size_t stride = 0;
    std::vector<size_t> offsets;
    for (const auto& p : props) {
      offsets.push_back(stride);
      stride += ply_detail::type_size(p.type);
    }
    std::vector<uint8_t> rec(stride);
    for (size_t v = 0; v < n_vertex; ++v) {
      f.read(reinterpret_cast<char*>(rec.data()),
             static_cast<std::streamsize>(stride));
      if (!f) throw ValidationError(path + ": truncated ply payload");
      for (size_t i = 0; i < props.size(); ++i)
        row[i] = ply_detail::decode(props[i].type, rec.data() + offsets[i]);
      cloud.points.emplace_back(row[static_cast<size_t>(ix)],
                                row[static_cast<size_t>(iy)],
                                row[static_cast<size_t>(iz)]);
      if (iconf >= 0) cloud.confidence.push_back(row[static_cast<size_t>(iconf)]);
      if (ikeep >= 0)
        cloud.keep.push_back(row[static_cast<size_t>(ikeep)] != 0.0);
    }
  } else {
    for (size_t v = 0; v < n_vertex; ++v) {
      for (size_t i = 0; i < props.size(); ++i)
        if (!(f >> row[i]))
          throw ValidationError(path + ": truncated ply payload");
      cloud.points.emplace_back(row[static_cast<size_t>(ix)],
                                row[static_cast<size_t>(iy)],
                                row[static_cast<size_t>(iz)]);
      if (iconf >= 0) cloud.confidence.push_back(row[static_cast<size_t>(iconf)]);
      if (ikeep >= 0)
        cloud.keep.push_back(row[static_cast<size_t>(ikeep)] != 0.0);
    }
  }
  cloud.validate();
  return cloud;
}

inline void save_ply(const std::string& path, const ScanCloud& cloud,
                     bool binary = false) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RunError("cannot write " + path);
  f << "ply\nformat " << (binary ? "binary_little_endian" : "ascii")
    << " 1.0\n";
  f << "element vertex " << cloud.points.size() << "\n";
  f << "property float x\nproperty float y\nproperty float z\n";
  if (!cloud.confidence.empty()) f << "property float confidence\n";
  if (!cloud.keep.empty()) f << "property uchar keep\n";
  f << "end_header\n";
  if (binary) {
    for (size_t i = 0; i < cloud.points.size(); ++i) {
      float xyz[3] = {static_cast<float>(cloud.points[i].x()),
                      static_cast<float>(cloud.points[i].y()),
                      static_cast<float>(cloud.points[i].z())};
      f.write(reinterpret_cast<const char*>(xyz), 12);
      if (!cloud.confidence.empty()) {
        float c = static_cast<float>(cloud.confidence[i]);
        f.write(reinterpret_cast<const char*>(&c), 4);
      }
      if (!cloud.keep.empty())
        f.write(reinterpret_cast<const char*>(&cloud.keep[i]), 1);
    }
  } else {
    f << std::setprecision(9);
    for (size_t i = 0; i < cloud.points.size(); ++i) {
      f << cloud.points[i].x() << " " << cloud.points[i].y() << " "
        << cloud.points[i].z();
      if (!cloud.confidence.empty()) f << " " << cloud.confidence[i];
      if (!cloud.keep.empty()) f << " " << static_cast<int>(cloud.keep[i]);
      f << "\n";
    }
  }
}

}  // namespace splatrig
