#pragma once

#include "splatrig/blendshape.hpp"
#include "splatrig/core.hpp"
#include "splatrig/quaternion.hpp"

#include <deque>

namespace splatrig {

// ---------------------------------------------------------------------------
// Gaussian surfel prototypes bound to mesh triangles. A prototype stores 13
// scalars (offset 3, rotation 4, log-scale 2, opacity logit 1, albedo 3) and
// a parent face. Binding composes the prototype with the parent's frame:
//   R = R_p R_c,  mu = R_p (s_p o mu_c) + mu_p,  (s_u, s_v) = s_p * s_c.
// ---------------------------------------------------------------------------

struct GaussianPrototype {
  int parent_face = 0;
  Vec3 offset = Vec3::Zero();        // mu_c, in parent-frame scale units
  Vec4 rotation = quat_identity();   // R_c
  Vec2 log_scale = Vec2::Zero();     // s_c = exp(log_scale)
  double opacity_logit = 0.0;        // sigma = logistic(opacity_logit)
  Vec3 albedo = Vec3(0.5, 0.5, 0.5);

  double opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }
};

struct WorldSplat {
  Vec3 center = Vec3::Zero();
  Mat3 rotation = Mat3::Identity();  // columns t_u, t_v, t_w
  Vec2 scales = Vec2::Ones();        // meters
  double opacity = 0.5;
  Vec3 albedo = Vec3(0.5, 0.5, 0.5);
  int prototype_index = -1;          // provenance for gradient scatter
  bool valid = true;
};

struct PrototypeGrad {
  Vec3 offset = Vec3::Zero();
  Vec4 rotation = Vec4::Zero();
  Vec2 log_scale = Vec2::Zero();
  double opacity_logit = 0.0;
  Vec3 albedo = Vec3::Zero();
};

struct WorldSplatGrad {
  Vec3 center = Vec3::Zero();
  Mat3 rotation = Mat3::Zero();
  Vec2 scales = Vec2::Zero();
  double opacity = 0.0;
  Vec3 albedo = Vec3::Zero();
};

inline std::vector<WorldSplat> bind_splats(
    const std::vector<GaussianPrototype>& protos,
    const std::vector<TriangleFrame>& frames, int* n_skipped = nullptr) {
  std::vector<WorldSplat> out(protos.size());
  int skipped = 0;
  for (size_t i = 0; i < protos.size(); ++i) {
    const auto& p = protos[i];
    WorldSplat& s = out[i];
    s.prototype_index = static_cast<int>(i);
    if (p.parent_face < 0 || p.parent_face >= static_cast<int>(frames.size()))
      throw ValidationError("prototype parent face out of range");
    const TriangleFrame& f = frames[static_cast<size_t>(p.parent_face)];
    if (!f.valid) {
      s.valid = false;
      ++skipped;
      continue;
    }
    Mat3 r_c = quat_to_rot(p.rotation);
    s.rotation = f.rotation * r_c;
    s.center = f.rotation * f.scale.cwiseProduct(p.offset) + f.centroid;
    Vec2 s_c = p.log_scale.array().exp();
    s.scales = Vec2(f.scale[0] * s_c[0], f.scale[1] * s_c[1]);
    s.opacity = p.opacity();
    s.albedo = p.albedo;
  }
  if (n_skipped) *n_skipped = skipped;
  return out;
}

/// Backpropagates world-splat gradients to prototype parameters and parent
/// frames. `grad_frames` must be sized like `frames`; invalid parents
/// contribute nothing (their splats were skipped in the forward pass).
inline void bind_splats_backward(const std::vector<GaussianPrototype>& protos,
                                 const std::vector<TriangleFrame>& frames,
                                 const std::vector<WorldSplatGrad>& grad_splats,
                                 std::vector<PrototypeGrad>& grad_protos,
                                 std::vector<TriangleFrameGrad>& grad_frames) {
  if (grad_splats.size() != protos.size())
    throw ValidationError("splat gradient count mismatch");
  grad_protos.assign(protos.size(), PrototypeGrad());
  for (size_t i = 0; i < protos.size(); ++i) {
    const auto& p = protos[i];
    const TriangleFrame& f = frames[static_cast<size_t>(p.parent_face)];
    if (!f.valid) continue;
    const WorldSplatGrad& g = grad_splats[i];
    PrototypeGrad& gp = grad_protos[i];
    TriangleFrameGrad& gf = grad_frames[static_cast<size_t>(p.parent_face)];

    Mat3 r_c = quat_to_rot(p.rotation);

    // R = R_p R_c
    Mat3 g_rc = f.rotation.transpose() * g.rotation;
    gf.rotation += g.rotation * r_c.transpose();
    gp.rotation = quat_to_rot_backward(p.rotation, g_rc);

    // mu = R_p (s_p o mu_c) + mu_p
    Vec3 g_scaled = f.rotation.transpose() * g.center;
    gf.rotation += g.center * f.scale.cwiseProduct(p.offset).transpose();
    gp.offset = g_scaled.cwiseProduct(f.scale);
    gf.scale += g_scaled.cwiseProduct(p.offset);
    gf.centroid += g.center;

    // s_k = s_pk * exp(l_k)
    Vec2 s_c = p.log_scale.array().exp();
    for (int k = 0; k < 2; ++k) {
      gp.log_scale[k] = g.scales[k] * f.scale[k] * s_c[k];
      gf.scale[k] += g.scales[k] * s_c[k];
    }

    double sig = p.opacity();
    gp.opacity_logit = g.opacity * sig * (1.0 - sig);
    gp.albedo = g.albedo;
  }
}

// ---------------------------------------------------------------------------
// Initialization: one prototype per face, centered, axis-aligned, with a
// world radius of about half the parent's mean edge length.
// ---------------------------------------------------------------------------

inline Vec2 init_log_scale_for_face(const std::vector<Vec3>& vertices,
                                    const Eigen::Vector3i& face,
                                    const TriangleFrame& frame) {
  const Vec3& a = vertices[static_cast<size_t>(face[0])];
  const Vec3& b = vertices[static_cast<size_t>(face[1])];
  const Vec3& c = vertices[static_cast<size_t>(face[2])];
  double mean_edge =
      ((b - a).norm() + (c - b).norm() + (a - c).norm()) / 3.0;
  double radius = 0.5 * mean_edge;
  return Vec2(std::log(radius / frame.scale[0]),
              std::log(radius / frame.scale[1]));
}

inline std::vector<GaussianPrototype> init_prototypes(
    const std::vector<Vec3>& vertices,
    const std::vector<Eigen::Vector3i>& faces,
    const std::vector<TriangleFrame>& frames) {
  std::vector<GaussianPrototype> protos;
  protos.reserve(faces.size());
  for (size_t fi = 0; fi < faces.size(); ++fi) {
    if (!frames[fi].valid)
      throw ValidationError("cannot initialize prototypes on a degenerate face");
    GaussianPrototype p;
    p.parent_face = static_cast<int>(fi);
    p.log_scale = init_log_scale_for_face(vertices, faces[fi], frames[fi]);
    protos.push_back(p);
  }
  return protos;
}

// ---------------------------------------------------------------------------
// Densification / pruning bookkeeping.
// ---------------------------------------------------------------------------

inline constexpr int kMinSplatsPerFace = 1;
inline constexpr int kMaxSplatsPerFace = 6;

struct DensifyStats {
  int window = 100;  // t_history
  std::vector<std::deque<double>> opacity_hist;
  std::vector<std::deque<double>> grad_hist;

  void reset(size_t n) {
    opacity_hist.assign(n, {});
    grad_hist.assign(n, {});
  }

  void push(const std::vector<double>& opacities,
            const std::vector<double>& grad_norms) {
    if (opacities.size() != opacity_hist.size() ||
        grad_norms.size() != grad_hist.size())
      throw ValidationError("stats update length mismatch");
    for (size_t i = 0; i < opacities.size(); ++i) {
      opacity_hist[i].push_back(opacities[i]);
      if (static_cast<int>(opacity_hist[i].size()) > window)
        opacity_hist[i].pop_front();
      grad_hist[i].push_back(grad_norms[i]);
      if (static_cast<int>(grad_hist[i].size()) > window)
        grad_hist[i].pop_front();
    }
  }

  static double mean_of(const std::deque<double>& q) {
    if (q.empty()) return 0.0;
    double s = 0.0;
    for (double v : q) s += v;
    return s / static_cast<double>(q.size());
  }

  double mean_opacity(size_t i) const { return mean_of(opacity_hist[i]); }
  double mean_grad(size_t i) const { return mean_of(grad_hist[i]); }
};

struct DensifyOutcome {
  int n_pruned = 0;
  int n_cloned = 0;
  int prune_deficit = 0;  // prunes skipped to keep every face populated
  int clone_deficit = 0;  // clones skipped because the face was full
  std::vector<int> removed_indices;   // into the pre-call prototype list
  std::vector<int> cloned_from;       // source indices, pre-call numbering
};

/// Prunes the n_prune lowest-mean-opacity prototypes (never emptying a face),
/// then clones the n_densify highest-mean-gradient survivors (never
/// overfilling a face), perturbing clone offset/log-scale with Gaussian noise.
/// Stats histories are rebuilt empty for the new prototype list.
inline DensifyOutcome densify_and_prune(std::vector<GaussianPrototype>& protos,
                                        DensifyStats& stats, int n_faces,
                                        int n_prune, int n_densify,
                                        double noise_scale, Rng& rng) {
  if (protos.empty()) throw ValidationError("cannot densify an empty rig");
  if (n_prune < 0 || n_densify < 0)
    throw ValidationError("densify counts must be nonnegative");

  const size_t n = protos.size();
  std::vector<int> face_count(static_cast<size_t>(n_faces), 0);
  for (const auto& p : protos) face_count[static_cast<size_t>(p.parent_face)]++;

  DensifyOutcome out;

  // Prune: ascending mean opacity, ties by index for determinism.
  std::vector<int> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return stats.mean_opacity(static_cast<size_t>(a)) <
           stats.mean_opacity(static_cast<size_t>(b));
  });
  std::vector<char> removed(n, 0);
  for (int idx : order) {
    if (out.n_pruned >= n_prune) break;
    int face = protos[static_cast<size_t>(idx)].parent_face;
    if (face_count[static_cast<size_t>(face)] <= kMinSplatsPerFace) continue;
    removed[static_cast<size_t>(idx)] = 1;
    face_count[static_cast<size_t>(face)]--;
    out.removed_indices.push_back(idx);
    out.n_pruned++;
  }
  out.prune_deficit = n_prune - out.n_pruned;

  // Clone: descending mean positional gradient among survivors.
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return stats.mean_grad(static_cast<size_t>(a)) >
           stats.mean_grad(static_cast<size_t>(b));
  });
  std::vector<GaussianPrototype> clones;
  for (int idx : order) {
    if (out.n_cloned >= n_densify) break;
    if (removed[static_cast<size_t>(idx)]) continue;
    int face = protos[static_cast<size_t>(idx)].parent_face;
    if (face_count[static_cast<size_t>(face)] >= kMaxSplatsPerFace) continue;
    GaussianPrototype c = protos[static_cast<size_t>(idx)];
    c.offset += rng.normal3() * noise_scale;
    c.log_scale[0] += rng.normal() * noise_scale;
    c.log_scale[1] += rng.normal() * noise_scale;
    clones.push_back(c);
    face_count[static_cast<size_t>(face)]++;
    out.cloned_from.push_back(idx);
    out.n_cloned++;
  }
  out.clone_deficit = n_densify - out.n_cloned;

  std::vector<GaussianPrototype> next;
  next.reserve(n - static_cast<size_t>(out.n_pruned) + clones.size());
  for (size_t i = 0; i < n; ++i)
    if (!removed[i]) next.push_back(protos[i]);
  next.insert(next.end(), clones.begin(), clones.end());
  protos = std::move(next);
  stats.reset(protos.size());
  return out;
}

inline std::vector<int> face_splat_counts(
    const std::vector<GaussianPrototype>& protos, int n_faces) {
  std::vector<int> counts(static_cast<size_t>(n_faces), 0);
  for (const auto& p : protos) counts[static_cast<size_t>(p.parent_face)]++;
  return counts;
}

}  // namespace splatrig
