#pragma once

#include "splatrig/blendshape.hpp"
#include "splatrig/core.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

namespace splatrig {

// ---------------------------------------------------------------------------
// Model container: plain text, whitespace separated. Layout:
//   splatrig_model 1
//   counts <n_vertices> <n_faces> <k_shape> <k_expr> <n_landmarks>
//   vertices        nv * 3 floats
//   faces           nf * 4 ints: i j k region_flag (0-based indices)
//   neck_pivot      3 floats
//   neck_weights    nv floats
//   shape_basis     (3 nv) * k_shape floats, row-major
//   expr_basis      (3 nv) * k_expr floats, row-major
//   landmarks       nl * 4 values: face b0 b1 b2
//   uvs             nf * 6 floats: u0 v0 u1 v1 u2 v2
// ---------------------------------------------------------------------------

inline void save_model(const std::string& path, const BlendshapeModel& m) {
  std::ofstream f(path);
  if (!f) throw RunError("cannot write " + path);
  f << std::setprecision(17);
  f << "splatrig_model 1\n";
  f << "counts " << m.n_vertices() << " " << m.n_faces() << " " << m.k_shape()
    << " " << m.k_expr() << " " << m.landmark_embedding.size() << "\n";
  f << "vertices\n";
  for (const Vec3& v : m.base_vertices)
    f << v.x() << " " << v.y() << " " << v.z() << "\n";
  f << "faces\n";
  for (size_t i = 0; i < m.faces.size(); ++i) {
    const auto& fc = m.faces[i];
    int region = m.face_region.empty() ? 0 : m.face_region[i];
    f << fc[0] << " " << fc[1] << " " << fc[2] << " " << region << "\n";
  }
  f << "neck_pivot " << m.neck_pivot.x() << " " << m.neck_pivot.y() << " "
    << m.neck_pivot.z() << "\n";
  f << "neck_weights\n";
  for (int i = 0; i < m.n_vertices(); ++i) f << m.neck_weights[i] << "\n";
  f << "shape_basis\n";
  for (int r = 0; r < m.shape_basis.rows(); ++r) {
    for (int c = 0; c < m.shape_basis.cols(); ++c)
      f << m.shape_basis(r, c) << (c + 1 == m.shape_basis.cols() ? "" : " ");
    f << "\n";
  }
  f << "expr_basis\n";
  for (int r = 0; r < m.expr_basis.rows(); ++r) {
    for (int c = 0; c < m.expr_basis.cols(); ++c)
      f << m.expr_basis(r, c) << (c + 1 == m.expr_basis.cols() ? "" : " ");
    f << "\n";
  }
  f << "landmarks\n";
  for (const auto& lm : m.landmark_embedding)
    f << lm.face << " " << lm.bary[0] << " " << lm.bary[1] << " " << lm.bary[2]
      << "\n";
  f << "uvs\n";
  for (size_t i = 0; i < m.faces.size(); ++i) {
    std::array<Vec2, 3> uv =
        m.uv_coords.empty() ? std::array<Vec2, 3>{} : m.uv_coords[i];
    f << uv[0].x() << " " << uv[0].y() << " " << uv[1].x() << " " << uv[1].y()
      << " " << uv[2].x() << " " << uv[2].y() << "\n";
  }
}

namespace io_detail {

inline void expect_token(std::istream& in, const std::string& want,
                         const std::string& path) {
  std::string got;
  if (!(in >> got) || got != want)
    throw ValidationError(path + ": expected '" + want + "', got '" + got + "'");
}

}  // namespace io_detail

inline BlendshapeModel load_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw RunError("cannot read " + path);
  io_detail::expect_token(f, "splatrig_model", path);
  int version = 0;
  f >> version;
  if (version != 1)
    throw ValidationError(path + ": unsupported model version");

  int nv = 0, nf = 0, kb = 0, ke = 0, nl = 0;
  io_detail::expect_token(f, "counts", path);
  f >> nv >> nf >> kb >> ke >> nl;
  if (!f || nv <= 0 || nf <= 0 || kb < 0 || ke < 0 || nl < 0)
    throw ValidationError(path + ": bad counts header");

  BlendshapeModel m;
  io_detail::expect_token(f, "vertices", path);
  m.base_vertices.resize(static_cast<size_t>(nv));
  for (auto& v : m.base_vertices) f >> v.x() >> v.y() >> v.z();

  io_detail::expect_token(f, "faces", path);
  m.faces.resize(static_cast<size_t>(nf));
  m.face_region.resize(static_cast<size_t>(nf));
  for (int i = 0; i < nf; ++i) {
    int region = 0;
    f >> m.faces[static_cast<size_t>(i)][0] >> m.faces[static_cast<size_t>(i)][1] >>
        m.faces[static_cast<size_t>(i)][2] >> region;
    m.face_region[static_cast<size_t>(i)] = static_cast<uint8_t>(region != 0);
  }

  io_detail::expect_token(f, "neck_pivot", path);
  f >> m.neck_pivot.x() >> m.neck_pivot.y() >> m.neck_pivot.z();

  io_detail::expect_token(f, "neck_weights", path);
  m.neck_weights.resize(nv);
  for (int i = 0; i < nv; ++i) f >> m.neck_weights[i];

  io_detail::expect_token(f, "shape_basis", path);
  m.shape_basis.resize(3 * nv, kb);
  for (int r = 0; r < 3 * nv; ++r)
    for (int c = 0; c < kb; ++c) f >> m.shape_basis(r, c);

  io_detail::expect_token(f, "expr_basis", path);
  m.expr_basis.resize(3 * nv, ke);
  for (int r = 0; r < 3 * nv; ++r)
    for (int c = 0; c < ke; ++c) f >> m.expr_basis(r, c);

  io_detail::expect_token(f, "landmarks", path);
  m.landmark_embedding.resize(static_cast<size_t>(nl));
  for (auto& lm : m.landmark_embedding)
    f >> lm.face >> lm.bary[0] >> lm.bary[1] >> lm.bary[2];

  io_detail::expect_token(f, "uvs", path);
  m.uv_coords.resize(static_cast<size_t>(nf));
  for (auto& uv : m.uv_coords)
    f >> uv[0].x() >> uv[0].y() >> uv[1].x() >> uv[1].y() >> uv[2].x() >>
        uv[2].y();

  if (!f) throw ValidationError(path + ": truncated model file");
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// OBJ mesh export/import (v/f records, 1-based indices).
// ---------------------------------------------------------------------------

inline void save_obj(const std::string& path, const std::vector<Vec3>& vertices,
                     const std::vector<Eigen::Vector3i>& faces) {
  std::ofstream f(path);
  if (!f) throw RunError("cannot write " + path);
  f << std::setprecision(17);
  for (const Vec3& v : vertices)
    f << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& fc : faces)
    f << "f " << fc[0] + 1 << " " << fc[1] + 1 << " " << fc[2] + 1 << "\n";
}

inline void load_obj(const std::string& path, std::vector<Vec3>& vertices,
                     std::vector<Eigen::Vector3i>& faces) {
  std::ifstream f(path);
  if (!f) throw RunError("cannot read " + path);
  vertices.clear();
  faces.clear();
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Vec3 v;
      ls >> v.x() >> v.y() >> v.z();
      if (!ls) throw ValidationError(path + ": bad vertex record");
      vertices.push_back(v);
    } else if (tag == "f") {
      // Accept "f 1 2 3" and slash forms like "f 1/1/1 2/2/2 3/3/3".
      Eigen::Vector3i fc;
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        if (!(ls >> tok)) throw ValidationError(path + ": bad face record");
        fc[k] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
        if (fc[k] < 0) throw ValidationError(path + ": face index underflow");
      }
      faces.push_back(fc);
    }
  }
  for (const auto& fc : faces)
    for (int k = 0; k < 3; ++k)
      if (fc[k] >= static_cast<int>(vertices.size()))
        throw ValidationError(path + ": face index out of range");
}

// ---------------------------------------------------------------------------
// Landmark 2D files: one "x y" pixel row per landmark.
// ---------------------------------------------------------------------------

inline void save_landmarks_2d(const std::string& path,
                              const std::vector<Vec2>& pts) {
  std::ofstream f(path);
  if (!f) throw RunError("cannot write " + path);
  f << std::setprecision(17);
  for (const Vec2& p : pts) f << p.x() << " " << p.y() << "\n";
}

inline std::vector<Vec2> load_landmarks_2d(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw RunError("cannot read " + path);
  std::vector<Vec2> pts;
  double x, y;
  while (f >> x >> y) pts.emplace_back(x, y);
  return pts;
}

/// 3D landmark tables ("x y z" rows), used to seed scan alignment.
inline void save_landmarks_3d(const std::string& path,
                              const std::vector<Vec3>& pts) {
  std::ofstream f(path);
  if (!f) throw RunError("cannot write " + path);
  f << std::setprecision(17);
  for (const Vec3& p : pts) f << p.x() << " " << p.y() << " " << p.z() << "\n";
}

inline std::vector<Vec3> load_landmarks_3d(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw RunError("cannot read " + path);
  std::vector<Vec3> pts;
  double x, y, z;
  while (f >> x >> y >> z) pts.emplace_back(x, y, z);
  return pts;
}

}  // namespace splatrig
