#pragma once

#include "splatrig/camera.hpp"
#include "splatrig/core.hpp"

namespace splatrig {

// ---------------------------------------------------------------------------
// Z-buffer triangle rasterizer producing the geometry supervision targets:
// per-pixel depth (perspective-correct), flat geometric normals in the camera
// frame, coverage, and a face-region mask from per-face flags. Not
// differentiated; gradients reach the mesh only through landmarks and splats.
// ---------------------------------------------------------------------------

struct MeshBuffers {
  ImageBuf depth;      // camera-z meters, +inf where empty
  ImageBuf normal;     // unit vectors, zero where empty
  ImageBuf coverage;   // 0/1
  ImageBuf face_mask;  // 0/1

  MeshBuffers(int w, int h)
      : depth(w, h, 1), normal(w, h, 3), coverage(w, h, 1), face_mask(w, h, 1) {
    std::fill(depth.data.begin(), depth.data.end(),
              std::numeric_limits<double>::infinity());
  }
};

inline MeshBuffers rasterize_mesh(const std::vector<Vec3>& vertices,
                                  const std::vector<Eigen::Vector3i>& faces,
                                  const std::vector<uint8_t>& face_region,
                                  const Camera& cam, int n_threads = 1) {
  cam.validate();
  if (!face_region.empty() && face_region.size() != faces.size())
    throw ValidationError("face-region flags must match face count");
  MeshBuffers buf(cam.width, cam.height);

  struct ScreenTri {
    Vec2 p0, p1, p2;
    double inv_z0, inv_z1, inv_z2;
    Vec3 normal;  // camera frame, unit
    uint8_t region;
    double min_x, max_x, min_y, max_y;
  };
  std::vector<ScreenTri> tris;
  tris.reserve(faces.size());
  for (size_t fi = 0; fi < faces.size(); ++fi) {
    const auto& f = faces[fi];
    Vec3 a = cam.to_camera(vertices[static_cast<size_t>(f[0])]);
    Vec3 b = cam.to_camera(vertices[static_cast<size_t>(f[1])]);
    Vec3 c = cam.to_camera(vertices[static_cast<size_t>(f[2])]);
    // Near-plane clipping is all-or-nothing: partially-behind triangles are
    // dropped rather than clipped, fine for head-at-distance framing.
    if (a.z() <= cam.near_clip || b.z() <= cam.near_clip ||
        c.z() <= cam.near_clip)
      continue;
    Vec3 n = (b - a).cross(c - a);
    double nn = n.norm();
    if (nn < 1e-18) continue;
    ScreenTri t;
    t.p0 = cam.project(a);
    t.p1 = cam.project(b);
    t.p2 = cam.project(c);
    t.inv_z0 = 1.0 / a.z();
    t.inv_z1 = 1.0 / b.z();
    t.inv_z2 = 1.0 / c.z();
    t.normal = n / nn;
    t.region = face_region.empty() ? 0 : face_region[fi];
    t.min_x = std::min({t.p0.x(), t.p1.x(), t.p2.x()});
    t.max_x = std::max({t.p0.x(), t.p1.x(), t.p2.x()});
    t.min_y = std::min({t.p0.y(), t.p1.y(), t.p2.y()});
    t.max_y = std::max({t.p0.y(), t.p1.y(), t.p2.y()});
    tris.push_back(t);
  }

  // Row-partitioned: each worker owns full rows, so no write conflicts and
  // the result is independent of the thread count.
  parallel_for(cam.height, resolve_thread_count(n_threads),
               [&](int64_t y0, int64_t y1) {
    for (const ScreenTri& t : tris) {
      double area = (t.p1.x() - t.p0.x()) * (t.p2.y() - t.p0.y()) -
                    (t.p1.y() - t.p0.y()) * (t.p2.x() - t.p0.x());
      if (area == 0.0) continue;
      int px0 = std::max(0, static_cast<int>(std::floor(t.min_x - 0.5)));
      int px1 = std::min(cam.width - 1, static_cast<int>(std::ceil(t.max_x)));
      int py0 = std::max(static_cast<int>(y0),
                         static_cast<int>(std::floor(t.min_y - 0.5)));
      int py1 = std::min(static_cast<int>(y1) - 1,
                         static_cast<int>(std::ceil(t.max_y)));
      for (int py = py0; py <= py1; ++py) {
        for (int px = px0; px <= px1; ++px) {
          double sx = px + 0.5, sy = py + 0.5;
          // Barycentrics from signed edge areas; inclusive boundary.
          double w0 = ((t.p1.x() - sx) * (t.p2.y() - sy) -
                       (t.p1.y() - sy) * (t.p2.x() - sx)) / area;
          double w1 = ((t.p2.x() - sx) * (t.p0.y() - sy) -
                       (t.p2.y() - sy) * (t.p0.x() - sx)) / area;
          double w2 = 1.0 - w0 - w1;
          if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
          double inv_z = w0 * t.inv_z0 + w1 * t.inv_z1 + w2 * t.inv_z2;
          double z = 1.0 / inv_z;
          if (z < buf.depth.at(px, py, 0)) {
            buf.depth.at(px, py, 0) = z;
            buf.normal.set_pixel3(px, py, t.normal);
            buf.coverage.at(px, py, 0) = 1.0;
            buf.face_mask.at(px, py, 0) = t.region ? 1.0 : 0.0;
          }
        }
      }
    }
  });
  return buf;
}

// ---------------------------------------------------------------------------
// Point projection for the landmark loss.
// ---------------------------------------------------------------------------

struct ProjectedPoint {
  Vec2 pixel = Vec2::Zero();
  bool valid = false;  // false when behind the near plane
};

inline std::vector<ProjectedPoint> project_points(
    const std::vector<Vec3>& points, const Camera& cam) {
  std::vector<ProjectedPoint> out(points.size());
  for (size_t i = 0; i < points.size(); ++i) {
    Vec3 p = cam.to_camera(points[i]);
    if (p.z() <= cam.near_clip) continue;
    out[i].pixel = cam.project(p);
    out[i].valid = true;
  }
  return out;
}

/// dL/d(world point) for each projected pixel gradient; invalid points get 0.
inline std::vector<Vec3> project_points_backward(
    const std::vector<Vec3>& points, const Camera& cam,
    const std::vector<Vec2>& grad_pixels) {
  if (grad_pixels.size() != points.size())
    throw ValidationError("projection gradient count mismatch");
  std::vector<Vec3> out(points.size(), Vec3::Zero());
  for (size_t i = 0; i < points.size(); ++i) {
    Vec3 p = cam.to_camera(points[i]);
    if (p.z() <= cam.near_clip) continue;
    out[i] = cam.r_wc.transpose() * cam.project_backward(p, grad_pixels[i]);
  }
  return out;
}

}  // namespace splatrig
