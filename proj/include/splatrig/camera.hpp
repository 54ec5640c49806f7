#pragma once

#include "splatrig/core.hpp"
#include "splatrig/quaternion.hpp"

namespace splatrig {

// ---------------------------------------------------------------------------
// Pinhole camera. Camera frame: x right, y up, z forward (away from the
// camera into the scene). Pixel row v grows downward, so v = cy - f * y / z.
// The world-to-camera transform is x_cam = r_wc * x_world + t_wc.
// ---------------------------------------------------------------------------

struct Camera {
  int width = 512;
  int height = 512;
  double fov_y_deg = 14.3;  // full vertical field of view
  Mat3 r_wc = Mat3::Identity();
  Vec3 t_wc = Vec3::Zero();
  double near_clip = 1e-3;
  double far_clip = 1e3;

  double focal() const {
    return 0.5 * height / std::tan(0.5 * deg_to_rad(fov_y_deg));
  }
  double cx() const { return 0.5 * width; }
  double cy() const { return 0.5 * height; }

  void validate() const {
    if (width < 8 || height < 8)
      throw ValidationError("camera resolution must be at least 8x8");
    if (fov_y_deg <= 0.0 || fov_y_deg >= 180.0)
      throw ValidationError("camera fov must lie in (0, 180) degrees");
    if (near_clip <= 0.0 || far_clip <= near_clip)
      throw ValidationError("camera clip planes must satisfy 0 < near < far");
  }

  Vec3 to_camera(const Vec3& p_world) const { return r_wc * p_world + t_wc; }

  /// Projects a camera-frame point; z must be positive.
  Vec2 project(const Vec3& p_cam) const {
    double f = focal();
    return Vec2(cx() + f * p_cam.x() / p_cam.z(),
                cy() - f * p_cam.y() / p_cam.z());
  }

  Vec3 project_backward(const Vec3& p_cam, const Vec2& grad_uv) const {
    double f = focal();
    double inv_z = 1.0 / p_cam.z();
    return Vec3(grad_uv.x() * f * inv_z, -grad_uv.y() * f * inv_z,
                -f * inv_z * inv_z *
                    (grad_uv.x() * p_cam.x() - grad_uv.y() * p_cam.y()));
  }

  /// Unit ray direction through the center of pixel (px, py), camera frame.
  Vec3 pixel_ray(int px, int py) const {
    double f = focal();
    Vec3 d((px + 0.5 - cx()) / f, (cy() - (py + 0.5)) / f, 1.0);
    return d.normalized();
  }
};

/// Camera placed on the +z axis at `distance`, looking back toward the
/// origin (world -z direction is "behind" the head when the head faces +z).
inline Camera make_front_camera(int width, int height, double fov_y_deg,
                                double distance) {
  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fov_y_deg = fov_y_deg;
  // Camera at (0, 0, distance) looking along world -z: camera z axis maps to
  // world -z, camera x to world -x (so the image is not mirrored), y to y.
  Mat3 r_cw;
  r_cw.col(0) = Vec3(-1, 0, 0);
  r_cw.col(1) = Vec3(0, 1, 0);
  r_cw.col(2) = Vec3(0, 0, -1);
  cam.r_wc = r_cw.transpose();
  cam.t_wc = -cam.r_wc * Vec3(0, 0, distance);
  return cam;
}

}  // namespace splatrig
