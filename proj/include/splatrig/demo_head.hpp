#pragma once

#include "splatrig/blendshape.hpp"
#include "splatrig/core.hpp"

namespace splatrig {

// ---------------------------------------------------------------------------
// Procedural head-like test model: a closed UV-sphere stretched into an
// ellipsoid with a nose and chin bump, smooth shape/expression bases, a
// neck-weight gradient, a 68-point landmark embedding and per-face UVs.
// Exists so the test suite and demos need no licensed mesh assets.
// The head faces +z; y is up. Units are meters.
// ---------------------------------------------------------------------------

namespace demo_detail {

inline double smoothstep(double lo, double hi, double x) {
  double t = std::min(1.0, std::max(0.0, (x - lo) / (hi - lo)));
  return t * t * (3.0 - 2.0 * t);
}

// Smooth radial bump centered at unit direction c.
inline double bump(const Vec3& dir, const Vec3& c, double sharpness) {
  double d = dir.dot(c.normalized());
  return d <= 0.0 ? 0.0 : std::pow(d, sharpness);
}

}  // namespace demo_detail

inline BlendshapeModel make_demo_head(int n_lat = 20, int n_lon = 40) {
  using demo_detail::bump;
  using demo_detail::smoothstep;
  if (n_lat < 6 || n_lon < 8)
    throw ValidationError("demo head grid too coarse");

  BlendshapeModel m;
  const Vec3 radii(0.078, 0.098, 0.083);

  // Vertices: poles plus an (n_lat - 1) x n_lon grid.
  std::vector<Vec3> dirs;  // unit sphere directions, same order as vertices
  auto push_vertex = [&](const Vec3& dir) {
    Vec3 p = dir.cwiseProduct(radii);
    // Nose and chin bumps, front hemisphere only.
    p += dir * (0.018 * bump(dir, Vec3(0, -0.1, 1), 24.0) +
                0.010 * bump(dir, Vec3(0, -0.75, 0.65), 10.0));
    m.base_vertices.push_back(p);
    dirs.push_back(dir);
  };

  push_vertex(Vec3(0, 1, 0));  // top pole
  for (int i = 1; i < n_lat; ++i) {
    double theta = kPi * i / n_lat;  // from +y
    for (int j = 0; j < n_lon; ++j) {
      double phi = 2.0 * kPi * j / n_lon;  // 0 faces +z
      Vec3 dir(std::sin(theta) * std::sin(phi), std::cos(theta),
               std::sin(theta) * std::cos(phi));
      push_vertex(dir);
    }
  }
  push_vertex(Vec3(0, -1, 0));  // bottom pole

  auto ring_vertex = [&](int ring, int j) {  // ring in [0, n_lat - 2]
    return 1 + ring * n_lon + (j % n_lon);
  };

  // Faces. Counter-clockwise seen from outside.
  const int bottom = static_cast<int>(m.base_vertices.size()) - 1;
  for (int j = 0; j < n_lon; ++j)
    m.faces.emplace_back(0, ring_vertex(0, j + 1), ring_vertex(0, j));
  for (int ring = 0; ring + 1 <= n_lat - 2; ++ring)
    for (int j = 0; j < n_lon; ++j) {
      int a = ring_vertex(ring, j), b = ring_vertex(ring, j + 1);
      int c = ring_vertex(ring + 1, j), d = ring_vertex(ring + 1, j + 1);
      m.faces.emplace_back(a, b, d);
      m.faces.emplace_back(a, d, c);
    }
  for (int j = 0; j < n_lon; ++j)
    m.faces.emplace_back(bottom, ring_vertex(n_lat - 2, j),
                         ring_vertex(n_lat - 2, j + 1));

  const int nv = m.n_vertices();
  const int nf = m.n_faces();

  // Shape basis: smooth global deformation fields along the vertex normal
  // direction (which equals `dir` for a star-shaped surface, close enough
  // for a basis). About 1 cm of displacement per unit of code.
  const int k_shape = 8;
  m.shape_basis = MatX::Zero(3 * nv, k_shape);
  for (int i = 0; i < nv; ++i) {
    const Vec3& d = dirs[static_cast<size_t>(i)];
    double x = d.x(), y = d.y(), z = d.z();
    double fields[k_shape] = {
        1.0,                    // overall inflation
        y,                      // vertical taper
        z,                      // front/back
        x * z,                  // cheek asymmetry
        y * y - 0.5,            // mid squeeze
        x * x - z * z,          // width vs depth
        y * z,                  // chin-forehead shear
        bump(d, Vec3(0, 0.3, 1), 6.0) - 0.2,  // face shell
    };
    for (int k = 0; k < k_shape; ++k)
      for (int c = 0; c < 3; ++c)
        m.shape_basis(3 * i + c, k) = 0.01 * fields[k] * d[c];
  }

  // Expression basis: localized lower-face fields (jaw, mouth corners,
  // cheeks), front hemisphere, ~1 cm per unit.
  const int k_expr = 6;
  m.expr_basis = MatX::Zero(3 * nv, k_expr);
  for (int i = 0; i < nv; ++i) {
    const Vec3& d = dirs[static_cast<size_t>(i)];
    double lower = smoothstep(0.3, -0.4, d.y());  // 1 near the chin
    double front = smoothstep(0.0, 0.5, d.z());
    double fields[k_expr] = {
        lower * front,                                    // jaw drop
        lower * front * d.x(),                            // jaw slide
        front * bump(d, Vec3(0.5, -0.4, 0.8), 12.0),      // right cheek
        front * bump(d, Vec3(-0.5, -0.4, 0.8), 12.0),     // left cheek
        front * bump(d, Vec3(0, -0.5, 1), 16.0),          // mouth push
        front * bump(d, Vec3(0, 0.45, 0.9), 10.0),        // brow raise
    };
    for (int k = 0; k < k_expr; ++k)
      for (int c = 0; c < 3; ++c)
        m.expr_basis(3 * i + c, k) = 0.01 * fields[k] * d[c];
  }

  // Neck skinning: weight ramps up toward the bottom of the head.
  m.neck_weights = VecX::Zero(nv);
  for (int i = 0; i < nv; ++i)
    m.neck_weights[i] = smoothstep(-0.35, -0.85, dirs[static_cast<size_t>(i)].y());
  m.neck_pivot = Vec3(0, -radii.y() * 0.9, 0);

  // Face-region flags: front hemisphere within the face shell.
  m.face_region.assign(static_cast<size_t>(nf), 0);
  for (int fi = 0; fi < nf; ++fi) {
    Vec3 c = Vec3::Zero();
    for (int k = 0; k < 3; ++k)
      c += dirs[static_cast<size_t>(m.faces[static_cast<size_t>(fi)][k])];
    c.normalize();
    if (c.z() > 0.35 && c.y() > -0.75 && c.y() < 0.8)
      m.face_region[static_cast<size_t>(fi)] = 1;
  }

  // UVs: equirectangular per-face-corner chart.
  m.uv_coords.resize(static_cast<size_t>(nf));
  for (int fi = 0; fi < nf; ++fi)
    for (int k = 0; k < 3; ++k) {
      const Vec3& d = dirs[static_cast<size_t>(m.faces[static_cast<size_t>(fi)][k])];
      double u = 0.5 + std::atan2(d.x(), d.z()) / (2.0 * kPi);
      double v = std::acos(std::min(1.0, std::max(-1.0, d.y()))) / kPi;
      m.uv_coords[static_cast<size_t>(fi)][static_cast<size_t>(k)] = Vec2(u, v);
    }

  // Landmarks: 68 probe directions over the face shell, each embedded in the
  // face whose centroid direction is closest (centroid barycentric).
  std::vector<Vec3> probes;
  auto probe = [&](double yaw_deg, double pitch_deg) {
    double yaw = deg_to_rad(yaw_deg), pitch = deg_to_rad(pitch_deg);
    probes.push_back(Vec3(std::sin(yaw) * std::cos(pitch), std::sin(pitch),
                          std::cos(yaw) * std::cos(pitch)));
  };
  for (int k = 0; k < 17; ++k)  // jaw line
    probe(-60.0 + 7.5 * k, -35.0 + 20.0 * std::sin(kPi * k / 16.0) - 20.0);
  for (int k = 0; k < 5; ++k) probe(-45.0 + 7.0 * k, 28.0);   // right brow
  for (int k = 0; k < 5; ++k) probe(17.0 + 7.0 * k, 28.0);    // left brow
  for (int k = 0; k < 4; ++k) probe(0.0, 18.0 - 9.0 * k);     // nose bridge
  for (int k = 0; k < 5; ++k) probe(-14.0 + 7.0 * k, -14.0);  // nose base
  for (int k = 0; k < 6; ++k)  // right eye
    probe(-33.0 + 4.5 * k, 14.0 + 5.0 * std::sin(kPi * k / 5.0));
  for (int k = 0; k < 6; ++k)  // left eye
    probe(11.0 + 4.5 * k, 14.0 + 5.0 * std::sin(kPi * k / 5.0));
  for (int k = 0; k < 12; ++k)  // outer mouth ring
    probe(20.0 * std::cos(2.0 * kPi * k / 12.0),
          -26.0 + 7.0 * std::sin(2.0 * kPi * k / 12.0));
  for (int k = 0; k < 8; ++k)  // inner mouth ring
    probe(12.0 * std::cos(2.0 * kPi * k / 8.0),
          -26.0 + 4.0 * std::sin(2.0 * kPi * k / 8.0));

  std::vector<Vec3> face_dirs(static_cast<size_t>(nf));
  for (int fi = 0; fi < nf; ++fi) {
    Vec3 c = Vec3::Zero();
    for (int k = 0; k < 3; ++k)
      c += dirs[static_cast<size_t>(m.faces[static_cast<size_t>(fi)][k])];
    face_dirs[static_cast<size_t>(fi)] = c.normalized();
  }
  for (const Vec3& p : probes) {
    int best = 0;
    double best_dot = -2.0;
    for (int fi = 0; fi < nf; ++fi) {
      double d = face_dirs[static_cast<size_t>(fi)].dot(p);
      if (d > best_dot) {
        best_dot = d;
        best = fi;
      }
    }
    LandmarkAnchor lm;
    lm.face = best;
    m.landmark_embedding.push_back(lm);
  }

  m.validate();
  return m;
}

}  // namespace splatrig
