#pragma once

#include "splatrig/core.hpp"
#include "splatrig/quaternion.hpp"

#include <queue>
#include <unordered_map>

namespace splatrig {

// ---------------------------------------------------------------------------
// Parametric head mesh: base geometry + linear shape/expression bases, a
// single neck joint with linear blend weights, an embedded landmark set and
// per-face-corner UVs. Units are meters.
// ---------------------------------------------------------------------------

struct LandmarkAnchor {
  int face = 0;
  Vec3 bary = Vec3(1.0 / 3, 1.0 / 3, 1.0 / 3);
};

struct BlendshapeModel {
  std::vector<Vec3> base_vertices;
  std::vector<Eigen::Vector3i> faces;
  MatX shape_basis;  // (3 * n_vertices) x k_shape, vertex-major rows
  MatX expr_basis;   // (3 * n_vertices) x k_expr
  VecX neck_weights;
  Vec3 neck_pivot = Vec3::Zero();
  std::vector<LandmarkAnchor> landmark_embedding;
  std::vector<std::array<Vec2, 3>> uv_coords;  // per face corner, in [0,1]^2
  std::vector<uint8_t> face_region;            // 1 = facial region, per face

  int n_vertices() const { return static_cast<int>(base_vertices.size()); }
  int n_faces() const { return static_cast<int>(faces.size()); }
  int k_shape() const { return static_cast<int>(shape_basis.cols()); }
  int k_expr() const { return static_cast<int>(expr_basis.cols()); }

  void validate() const {
    const int nv = n_vertices();
    if (nv == 0) throw ValidationError("model has no vertices");
    for (const auto& f : faces)
      for (int k = 0; k < 3; ++k)
        if (f[k] < 0 || f[k] >= nv)
          throw ValidationError("face index out of range");
    if (shape_basis.rows() != 3 * nv || expr_basis.rows() != 3 * nv)
      throw ValidationError("basis row count must equal 3 * vertex count");
    if (neck_weights.size() != nv)
      throw ValidationError("neck weight count must equal vertex count");
    for (int i = 0; i < nv; ++i)
      if (neck_weights[i] < 0.0 || neck_weights[i] > 1.0)
        throw ValidationError("neck weights must lie in [0,1]");
    for (const auto& lm : landmark_embedding) {
      if (lm.face < 0 || lm.face >= n_faces())
        throw ValidationError("landmark face index out of range");
      if (lm.bary.minCoeff() < -1e-9 ||
          std::abs(lm.bary.sum() - 1.0) > 1e-6)
        throw ValidationError("landmark barycentrics must be a convex combination");
    }
    if (!uv_coords.empty() && uv_coords.size() != faces.size())
      throw ValidationError("uv chart must have one entry per face");
    if (!face_region.empty() && face_region.size() != faces.size())
      throw ValidationError("face-region flags must have one entry per face");
  }
};

struct Pose {
  Vec4 rotation = quat_identity();       // global, model -> world
  Vec3 translation = Vec3::Zero();       // meters
  Vec4 neck_rotation = quat_identity();  // about the model's neck pivot
};

struct PoseGrad {
  Vec4 rotation = Vec4::Zero();
  Vec3 translation = Vec3::Zero();
  Vec4 neck_rotation = Vec4::Zero();
};

// ---------------------------------------------------------------------------
// pose_mesh
// ---------------------------------------------------------------------------

inline std::vector<Vec3> pose_mesh(const BlendshapeModel& model,
                                   const VecX& beta, const VecX& psi,
                                   const Pose& pose) {
  if (beta.size() != model.k_shape())
    throw ValidationError("shape code length does not match basis width");
  if (psi.size() != model.k_expr())
    throw ValidationError("expression code length does not match basis width");

  const int nv = model.n_vertices();
  VecX shape_off = model.shape_basis * beta;
  VecX expr_off = model.expr_basis * psi;
  Mat3 r_neck = quat_to_rot(pose.neck_rotation);
  Mat3 r_glob = quat_to_rot(pose.rotation);

  std::vector<Vec3> out(static_cast<size_t>(nv));
  for (int i = 0; i < nv; ++i) {
    Vec3 v = model.base_vertices[i] +
             Vec3(shape_off[3 * i], shape_off[3 * i + 1], shape_off[3 * i + 2]) +
             Vec3(expr_off[3 * i], expr_off[3 * i + 1], expr_off[3 * i + 2]);
    double w = model.neck_weights[i];
    Vec3 bent = r_neck * (v - model.neck_pivot) + model.neck_pivot;
    Vec3 blended = (1.0 - w) * v + w * bent;
    out[static_cast<size_t>(i)] = r_glob * blended + pose.translation;
  }
  return out;
}

/// Backpropagates per-vertex position gradients to (beta, psi, pose).
inline void pose_mesh_backward(const BlendshapeModel& model, const VecX& beta,
                               const VecX& psi, const Pose& pose,
                               const std::vector<Vec3>& grad_vertices,
                               VecX& grad_beta, VecX& grad_psi,
                               PoseGrad& grad_pose) {
  const int nv = model.n_vertices();
  VecX shape_off = model.shape_basis * beta;
  VecX expr_off = model.expr_basis * psi;
  Mat3 r_neck = quat_to_rot(pose.neck_rotation);
  Mat3 r_glob = quat_to_rot(pose.rotation);

  Mat3 grad_r_glob = Mat3::Zero();
  Mat3 grad_r_neck = Mat3::Zero();
  VecX grad_pre(3 * nv);  // d L / d (vertex before skinning)

  for (int i = 0; i < nv; ++i) {
    Vec3 v = model.base_vertices[i] +
             Vec3(shape_off[3 * i], shape_off[3 * i + 1], shape_off[3 * i + 2]) +
             Vec3(expr_off[3 * i], expr_off[3 * i + 1], expr_off[3 * i + 2]);
    double w = model.neck_weights[i];
    Vec3 bent = r_neck * (v - model.neck_pivot) + model.neck_pivot;
    Vec3 blended = (1.0 - w) * v + w * bent;

    const Vec3& g = grad_vertices[static_cast<size_t>(i)];
    grad_pose.translation += g;
    grad_r_glob += g * blended.transpose();
    Vec3 g_blend = r_glob.transpose() * g;
    grad_r_neck += w * g_blend * (v - model.neck_pivot).transpose();
    Vec3 g_v = (1.0 - w) * g_blend + w * (r_neck.transpose() * g_blend);
    grad_pre[3 * i] = g_v.x();
    grad_pre[3 * i + 1] = g_v.y();
    grad_pre[3 * i + 2] = g_v.z();
  }

  grad_beta = model.shape_basis.transpose() * grad_pre;
  grad_psi = model.expr_basis.transpose() * grad_pre;
  grad_pose.rotation = quat_to_rot_backward(pose.rotation, grad_r_glob);
  grad_pose.neck_rotation =
      quat_to_rot_backward(pose.neck_rotation, grad_r_neck);
}

// ---------------------------------------------------------------------------
// Triangle frames for splat binding.
// ---------------------------------------------------------------------------

inline constexpr double kDegenerateAreaThreshold = 1e-12;  // model units^2

struct TriangleFrame {
  Mat3 rotation = Mat3::Identity();  // columns t_u, t_v, n
  Vec3 scale = Vec3::Ones();         // s_pu, s_pv, s_pn = min(s_pu, s_pv)
  Vec3 centroid = Vec3::Zero();
  bool valid = true;
};

struct TriangleFrameGrad {
  Mat3 rotation = Mat3::Zero();
  Vec3 scale = Vec3::Zero();
  Vec3 centroid = Vec3::Zero();
};

inline TriangleFrame triangle_frame(const Vec3& v0, const Vec3& v1,
                                    const Vec3& v2) {
  TriangleFrame f;
  Vec3 e1 = v1 - v0;
  Vec3 e2 = v2 - v0;
  Vec3 c = e1.cross(e2);
  double cn = c.norm();
  if (0.5 * cn < kDegenerateAreaThreshold) {
    f.valid = false;
    return f;
  }
  double s_u = e1.norm();
  Vec3 t_u = e1 / s_u;
  Vec3 n = c / cn;
  Vec3 t_v = n.cross(t_u);
  double s_v = cn / s_u;  // extent of the triangle along t_v
  f.rotation.col(0) = t_u;
  f.rotation.col(1) = t_v;
  f.rotation.col(2) = n;
  f.scale = Vec3(s_u, s_v, std::min(s_u, s_v));
  f.centroid = (v0 + v1 + v2) / 3.0;
  return f;
}

inline std::vector<TriangleFrame> triangle_frames(
    const std::vector<Vec3>& vertices,
    const std::vector<Eigen::Vector3i>& faces) {
  std::vector<TriangleFrame> out(faces.size());
  for (size_t i = 0; i < faces.size(); ++i) {
    const auto& f = faces[i];
    out[i] = triangle_frame(vertices[static_cast<size_t>(f[0])],
                            vertices[static_cast<size_t>(f[1])],
                            vertices[static_cast<size_t>(f[2])]);
  }
  return out;
}

/// Accumulates dL/d(v0,v1,v2) from a frame gradient. No-op for invalid frames.
inline void triangle_frame_backward(const Vec3& v0, const Vec3& v1,
                                    const Vec3& v2,
                                    const TriangleFrameGrad& g, Vec3& g_v0,
                                    Vec3& g_v1, Vec3& g_v2) {
  Vec3 e1 = v1 - v0;
  Vec3 e2 = v2 - v0;
  Vec3 c = e1.cross(e2);
  double cn = c.norm();
  if (0.5 * cn < kDegenerateAreaThreshold) return;
  double s_u = e1.norm();
  Vec3 t_u = e1 / s_u;
  Vec3 n = c / cn;
  double s_v = cn / s_u;

  Vec3 g_tu = g.rotation.col(0);
  Vec3 g_tv = g.rotation.col(1);
  Vec3 g_n = g.rotation.col(2);
  double g_su = g.scale[0];
  double g_sv = g.scale[1];
  // s_pn = min(s_pu, s_pv): route to whichever side is smaller.
  if (s_u <= s_v)
    g_su += g.scale[2];
  else
    g_sv += g.scale[2];

  // t_v = n x t_u
  g_n += t_u.cross(g_tv);
  g_tu += g_tv.cross(n);

  // s_v = |c| / s_u
  Vec3 g_c = (g_sv / s_u) * n;
  g_su -= g_sv * s_v / s_u;

  // n = c / |c|
  g_c += (g_n - n * n.dot(g_n)) / cn;

  // t_u = e1 / |e1|, s_u = |e1|
  Vec3 g_e1 = (g_tu - t_u * t_u.dot(g_tu)) / s_u + g_su * t_u;

  // c = e1 x e2
  g_e1 += e2.cross(g_c);
  Vec3 g_e2 = g_c.cross(e1);

  Vec3 g_cent = g.centroid / 3.0;
  g_v0 += g_cent - g_e1 - g_e2;
  g_v1 += g_cent + g_e1;
  g_v2 += g_cent + g_e2;
}

// ---------------------------------------------------------------------------
// Landmarks
// ---------------------------------------------------------------------------

inline std::vector<Vec3> landmarks_3d(const std::vector<Vec3>& vertices,
                                      const BlendshapeModel& model) {
  std::vector<Vec3> out;
  out.reserve(model.landmark_embedding.size());
  for (const auto& lm : model.landmark_embedding) {
    const auto& f = model.faces[static_cast<size_t>(lm.face)];
    out.push_back(lm.bary[0] * vertices[static_cast<size_t>(f[0])] +
                  lm.bary[1] * vertices[static_cast<size_t>(f[1])] +
                  lm.bary[2] * vertices[static_cast<size_t>(f[2])]);
  }
  return out;
}

inline void landmarks_3d_backward(const std::vector<Vec3>& grad_landmarks,
                                  const BlendshapeModel& model,
                                  std::vector<Vec3>& grad_vertices) {
  for (size_t i = 0; i < model.landmark_embedding.size(); ++i) {
    const auto& lm = model.landmark_embedding[i];
    const auto& f = model.faces[static_cast<size_t>(lm.face)];
    for (int k = 0; k < 3; ++k)
      grad_vertices[static_cast<size_t>(f[k])] += lm.bary[k] * grad_landmarks[i];
  }
}

// ---------------------------------------------------------------------------
// Face adjacency up to degree D over shared-vertex neighborhoods.
// ---------------------------------------------------------------------------

/// Returns sorted neighbor lists; every face includes itself. A_ij = 1 iff
/// face j is reachable from face i in at most `degree` hops.
inline std::vector<std::vector<int>> face_adjacency(
    const std::vector<Eigen::Vector3i>& faces, int degree) {
  if (degree < 1) throw ValidationError("adjacency degree must be >= 1");
  const int nf = static_cast<int>(faces.size());

  std::unordered_map<int, std::vector<int>> vert_to_faces;
  for (int fi = 0; fi < nf; ++fi)
    for (int k = 0; k < 3; ++k)
      vert_to_faces[faces[static_cast<size_t>(fi)][k]].push_back(fi);

  std::vector<std::vector<int>> direct(static_cast<size_t>(nf));
  for (int fi = 0; fi < nf; ++fi) {
    std::vector<int>& nb = direct[static_cast<size_t>(fi)];
    for (int k = 0; k < 3; ++k) {
      const auto& shared = vert_to_faces[faces[static_cast<size_t>(fi)][k]];
      nb.insert(nb.end(), shared.begin(), shared.end());
    }
    std::sort(nb.begin(), nb.end());
    nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
  }

  std::vector<std::vector<int>> out(static_cast<size_t>(nf));
  std::vector<int> dist(static_cast<size_t>(nf));
  for (int fi = 0; fi < nf; ++fi) {
    std::fill(dist.begin(), dist.end(), -1);
    std::queue<int> q;
    q.push(fi);
    dist[static_cast<size_t>(fi)] = 0;
    std::vector<int>& reach = out[static_cast<size_t>(fi)];
    reach.push_back(fi);
    while (!q.empty()) {
      int cur = q.front();
      q.pop();
      if (dist[static_cast<size_t>(cur)] >= degree) continue;
      for (int nb : direct[static_cast<size_t>(cur)]) {
        if (dist[static_cast<size_t>(nb)] >= 0) continue;
        dist[static_cast<size_t>(nb)] = dist[static_cast<size_t>(cur)] + 1;
        reach.push_back(nb);
        q.push(nb);
      }
    }
    std::sort(reach.begin(), reach.end());
  }
  return out;
}

}  // namespace splatrig
