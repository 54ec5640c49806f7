#pragma once

#include "splatrig/core.hpp"

namespace splatrig {

// Quaternions are stored as raw (w, x, y, z) vectors and normalized at the
// point of use, so optimizer updates and finite-difference probes may leave
// them unnormalized without changing the represented rotation's validity.

inline Vec4 quat_identity() { return Vec4(1.0, 0.0, 0.0, 0.0); }

inline Vec4 quat_from_axis_angle(const Vec3& axis, double angle_rad) {
  Vec3 a = axis.normalized();
  double h = 0.5 * angle_rad;
  double s = std::sin(h);
  return Vec4(std::cos(h), s * a.x(), s * a.y(), s * a.z());
}

/// Hamilton product; rotation composition q1 then applied after q2's frame,
/// i.e. rot(quat_multiply(q1, q2)) == rot(q1) * rot(q2).
inline Vec4 quat_multiply(const Vec4& q1, const Vec4& q2) {
  double w1 = q1[0], x1 = q1[1], y1 = q1[2], z1 = q1[3];
  double w2 = q2[0], x2 = q2[1], y2 = q2[2], z2 = q2[3];
  return Vec4(w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
              w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
              w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
              w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2);
}

/// Rotation matrix from a (not necessarily unit) quaternion.
inline Mat3 quat_to_rot(const Vec4& q_raw) {
  Vec4 q = q_raw / q_raw.norm();
  double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

/// Maps dL/dR back to dL/dq_raw, accounting for the normalization in
/// quat_to_rot.
inline Vec4 quat_to_rot_backward(const Vec4& q_raw, const Mat3& grad_r) {
  double n = q_raw.norm();
  Vec4 q = q_raw / n;
  double w = q[0], x = q[1], y = q[2], z = q[3];

  Mat3 dw, dx, dy, dz;
  dw << 0, -z, y,
        z, 0, -x,
        -y, x, 0;
  dx << 0, y, z,
        y, -2 * x, -w,
        z, w, -2 * x;
  dy << -2 * y, x, w,
        x, 0, z,
        -w, z, -2 * y;
  dz << -2 * z, -w, x,
        w, -2 * z, y,
        x, y, 0;

  Vec4 g_unit;
  g_unit[0] = 2.0 * (grad_r.array() * dw.array()).sum();
  g_unit[1] = 2.0 * (grad_r.array() * dx.array()).sum();
  g_unit[2] = 2.0 * (grad_r.array() * dy.array()).sum();
  g_unit[3] = 2.0 * (grad_r.array() * dz.array()).sum();

  // d(q_raw/|q_raw|)/dq_raw = (I - q q^T) / |q_raw|
  return (g_unit - q * q.dot(g_unit)) / n;
}

}  // namespace splatrig
