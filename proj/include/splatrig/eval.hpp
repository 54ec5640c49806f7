#pragma once

#include "splatrig/core.hpp"

#include <Eigen/Dense>

#include <numeric>

namespace splatrig {

// ---------------------------------------------------------------------------
// Geometric evaluation: similarity alignment of a scan cloud to a predicted
// mesh (landmark-seeded, ICP-refined), then point-to-surface distance
// statistics in millimeters. Distances are measured in the mesh's metric
// frame, so scaled clouds evaluate identically to unscaled ones in
// non-metrical mode.
// ---------------------------------------------------------------------------

struct AlignmentResult {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double scale = 1.0;
  double residual_rms = 0.0;

  Vec3 apply(const Vec3& p) const { return scale * (rotation * p) + translation; }
};

/// Least-squares similarity (or rigid) transform mapping source onto target.
inline AlignmentResult align(const std::vector<Vec3>& source,
                             const std::vector<Vec3>& target, bool with_scale) {
  if (source.size() != target.size())
    throw ValidationError("alignment point counts differ");
  const size_t n = source.size();
  if (n < 3) throw ValidationError("alignment needs at least 3 points");

  MatX src(3, n), dst(3, n);
  for (size_t i = 0; i < n; ++i) {
    src.col(static_cast<Eigen::Index>(i)) = source[i];
    dst.col(static_cast<Eigen::Index>(i)) = target[i];
  }
  // Reject (near-)collinear configurations: the rotation about the line is
  // unobservable and umeyama silently returns garbage.
  Vec3 mean = src.rowwise().mean();
  MatX centered = src.colwise() - mean;
  Eigen::JacobiSVD<MatX> svd(centered, Eigen::ComputeThinU);
  double spread = svd.singularValues()[0];
  if (spread < 1e-12 || svd.singularValues()[1] < 1e-9 * spread)
    throw ValidationError("alignment points are collinear or coincident");

  Mat4 t = Eigen::umeyama(src, dst, with_scale);
  AlignmentResult res;
  double s = t.block<3, 1>(0, 0).norm();
  res.scale = with_scale ? s : 1.0;
  res.rotation = t.block<3, 3>(0, 0) / s;
  res.translation = t.block<3, 1>(0, 3);
  double err2 = 0.0;
  for (size_t i = 0; i < n; ++i)
    err2 += (res.apply(source[i]) - target[i]).squaredNorm();
  res.residual_rms = std::sqrt(err2 / static_cast<double>(n));
  return res;
}

// ---------------------------------------------------------------------------
// Exact point-to-triangle distance (interior / edge / vertex regions).
// ---------------------------------------------------------------------------

inline Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a,
                                      const Vec3& b, const Vec3& c) {
  // Ericson, Real-Time Collision Detection, 5.1.5.
  Vec3 ab = b - a, ac = c - a, ap = p - a;
  double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  Vec3 bp = p - b;
  double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

  Vec3 cp = p - c;
  double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

  double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);

  double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

// ---------------------------------------------------------------------------
// Median-split AABB tree over triangles.
// ---------------------------------------------------------------------------

class TriangleBvh {
 public:
  TriangleBvh(const std::vector<Vec3>& vertices,
              const std::vector<Eigen::Vector3i>& faces)
      : vertices_(vertices), faces_(faces) {
    if (faces.empty()) throw ValidationError("bvh over an empty mesh");
    order_.resize(faces.size());
    std::iota(order_.begin(), order_.end(), 0);
    centroids_.resize(faces.size());
    for (size_t i = 0; i < faces.size(); ++i) {
      const auto& f = faces[i];
      centroids_[i] = (vertices[static_cast<size_t>(f[0])] +
                       vertices[static_cast<size_t>(f[1])] +
                       vertices[static_cast<size_t>(f[2])]) / 3.0;
    }
    nodes_.reserve(2 * faces.size());
    build(0, faces.size());
  }

  /// Squared distance and closest surface point.
  double closest(const Vec3& query, Vec3& closest_point, int& face_index) const {
    double best = std::numeric_limits<double>::infinity();
    face_index = -1;
    search(0, query, best, closest_point, face_index);
    return best;
  }

  double distance(const Vec3& query) const {
    Vec3 cp;
    int fi;
    return std::sqrt(closest(query, cp, fi));
  }

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;   // child node ids; leaf when left < 0
    size_t begin = 0, end = 0;   // into order_, leaves only
  };

  static constexpr size_t kLeafSize = 8;

  size_t build(size_t begin, size_t end) {
    Node node;
    node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    node.hi = -node.lo;
    for (size_t i = begin; i < end; ++i) {
      const auto& f = faces_[order_[i]];
      for (int k = 0; k < 3; ++k) {
        const Vec3& v = vertices_[static_cast<size_t>(f[k])];
        node.lo = node.lo.cwiseMin(v);
        node.hi = node.hi.cwiseMax(v);
      }
    }
    size_t id = nodes_.size();
    nodes_.push_back(node);
    if (end - begin <= kLeafSize) {
      nodes_[id].begin = begin;
      nodes_[id].end = end;
      return id;
    }
    Vec3 extent = node.hi - node.lo;
    int axis = 0;
    if (extent.y() > extent.x()) axis = 1;
    if (extent.z() > extent[axis]) axis = 2;
    size_t mid = (begin + end) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](size_t a, size_t b) {
                       return centroids_[a][axis] < centroids_[b][axis];
                     });
    size_t left = build(begin, mid);
    size_t right = build(mid, end);
    nodes_[id].left = static_cast<int>(left);
    nodes_[id].right = static_cast<int>(right);
    return id;
  }

  static double box_dist2(const Node& n, const Vec3& p) {
    Vec3 d = (n.lo - p).cwiseMax(p - n.hi).cwiseMax(0.0);
    return d.squaredNorm();
  }

  void search(size_t id, const Vec3& q, double& best, Vec3& best_point,
              int& best_face) const {
    const Node& node = nodes_[id];
    if (box_dist2(node, q) >= best) return;
    if (node.left < 0) {
      for (size_t i = node.begin; i < node.end; ++i) {
        const auto& f = faces_[order_[i]];
        Vec3 cp = closest_point_on_triangle(
            q, vertices_[static_cast<size_t>(f[0])],
            vertices_[static_cast<size_t>(f[1])],
            vertices_[static_cast<size_t>(f[2])]);
        double d2 = (q - cp).squaredNorm();
        if (d2 < best) {
          best = d2;
          best_point = cp;
          best_face = static_cast<int>(order_[i]);
        }
      }
      return;
    }
    // Visit the nearer child first to tighten the bound early.
    double dl = box_dist2(nodes_[static_cast<size_t>(node.left)], q);
    double dr = box_dist2(nodes_[static_cast<size_t>(node.right)], q);
    if (dl <= dr) {
      search(static_cast<size_t>(node.left), q, best, best_point, best_face);
      search(static_cast<size_t>(node.right), q, best, best_point, best_face);
    } else {
      search(static_cast<size_t>(node.right), q, best, best_point, best_face);
      search(static_cast<size_t>(node.left), q, best, best_point, best_face);
    }
  }

  const std::vector<Vec3>& vertices_;
  const std::vector<Eigen::Vector3i>& faces_;
  std::vector<size_t> order_;
  std::vector<Vec3> centroids_;
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// ICP refinement and the evaluation protocol.
// ---------------------------------------------------------------------------

/// Refines a cloud-to-mesh alignment by alternating closest-point
/// correspondence and re-alignment. Stops at the iteration cap or when the
/// residual improves by less than 1e-7.
inline AlignmentResult refine_icp(const std::vector<Vec3>& cloud,
                                  const TriangleBvh& bvh,
                                  const AlignmentResult& init, int iterations,
                                  bool with_scale) {
  AlignmentResult cur = init;
  double prev_rms = std::numeric_limits<double>::infinity();
  for (int it = 0; it < iterations; ++it) {
    std::vector<Vec3> moved(cloud.size());
    std::vector<Vec3> matched(cloud.size());
    double err2 = 0.0;
    for (size_t i = 0; i < cloud.size(); ++i) {
      moved[i] = cur.apply(cloud[i]);
      Vec3 cp;
      int fi;
      bvh.closest(moved[i], cp, fi);
      matched[i] = cp;
      err2 += (moved[i] - cp).squaredNorm();
    }
    double rms = std::sqrt(err2 / static_cast<double>(cloud.size()));
    if (std::abs(prev_rms - rms) < 1e-7) break;
    prev_rms = rms;
    // Re-solve from the original cloud to the current correspondences.
    AlignmentResult next = align(cloud, matched, with_scale);
    cur = next;
  }
  // Final residual against the surface.
  double err2 = 0.0;
  for (const Vec3& p : cloud) {
    Vec3 cp;
    int fi;
    err2 += bvh.closest(cur.apply(p), cp, fi);
  }
  cur.residual_rms = std::sqrt(err2 / static_cast<double>(cloud.size()));
  return cur;
}

struct EvalMetrics {
  double mean_mm = 0.0;
  double median_mm = 0.0;
  double std_mm = 0.0;
  size_t count = 0;
  double align_scale = 1.0;
  double align_residual_rms = 0.0;
};

/// Full protocol: landmark-seeded similarity alignment, optional ICP, then
/// per-point distance statistics. The cloud and its landmarks are in mm; the
/// mesh and its landmarks arrive in meters and are converted to mm here, so
/// all alignment and distances live in the mesh's metric frame. Scaled
/// clouds therefore evaluate identically in with_scale mode.
inline EvalMetrics evaluate_cloud(const std::vector<Vec3>& cloud_mm,
                                  const std::vector<Vec3>& cloud_landmarks_mm,
                                  const std::vector<Vec3>& mesh_vertices,
                                  const std::vector<Eigen::Vector3i>& mesh_faces,
                                  const std::vector<Vec3>& mesh_landmarks,
                                  bool with_scale, int icp_iterations,
                                  int n_threads = 1) {
  if (cloud_landmarks_mm.size() != mesh_landmarks.size())
    throw ValidationError("landmark pair counts differ");
  if (cloud_mm.empty()) throw ValidationError("empty evaluation cloud");

  std::vector<Vec3> mesh_mm(mesh_vertices.size());
  for (size_t i = 0; i < mesh_vertices.size(); ++i)
    mesh_mm[i] = mesh_vertices[i] * 1000.0;
  std::vector<Vec3> mesh_lmk_mm(mesh_landmarks.size());
  for (size_t i = 0; i < mesh_landmarks.size(); ++i)
    mesh_lmk_mm[i] = mesh_landmarks[i] * 1000.0;

  TriangleBvh bvh(mesh_mm, mesh_faces);
  AlignmentResult a = align(cloud_landmarks_mm, mesh_lmk_mm, with_scale);
  if (icp_iterations > 0)
    a = refine_icp(cloud_mm, bvh, a, icp_iterations, with_scale);

  std::vector<double> dist_mm(cloud_mm.size());
  parallel_for(static_cast<int64_t>(cloud_mm.size()),
               resolve_thread_count(n_threads), [&](int64_t b, int64_t e) {
    for (int64_t i = b; i < e; ++i)
      dist_mm[static_cast<size_t>(i)] =
          bvh.distance(a.apply(cloud_mm[static_cast<size_t>(i)]));
  });

  EvalMetrics m;
  m.count = dist_mm.size();
  m.align_scale = a.scale;
  m.align_residual_rms = a.residual_rms;
  double sum = 0.0;
  for (double d : dist_mm) sum += d;
  m.mean_mm = sum / static_cast<double>(m.count);
  double var = 0.0;
  for (double d : dist_mm) var += (d - m.mean_mm) * (d - m.mean_mm);
  m.std_mm = std::sqrt(var / static_cast<double>(m.count));
  std::vector<double> sorted = dist_mm;
  std::sort(sorted.begin(), sorted.end());
  m.median_mm = (m.count % 2 == 1)
                    ? sorted[m.count / 2]
                    : 0.5 * (sorted[m.count / 2 - 1] + sorted[m.count / 2]);
  if (m.median_mm > m.mean_mm + 3.0 * m.std_mm + 1e-12)
    throw NumericalError("evaluation sanity bound violated (median >> mean)");
  return m;
}

}  // namespace splatrig
