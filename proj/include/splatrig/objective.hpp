#pragma once

#include "splatrig/core.hpp"
#include "splatrig/gaussian_rig.hpp"
#include "splatrig/mesh_raster.hpp"
#include "splatrig/shading.hpp"
#include "splatrig/splat_render.hpp"

#include <map>

namespace splatrig {

// ---------------------------------------------------------------------------
// Fitting objective: masked photometric L1, landmark L1, normal/depth
// coupling against the rasterized mesh, splat regularizers, and code
// regularizers. Every image term is a mean so weights are
// resolution-independent.
// ---------------------------------------------------------------------------

// Defaults balance two failure modes of single-camera fits: the image is
// invariant under scaling the head about the camera center, so the code
// priors (constant-norm pull) must be strong enough to anchor that direction
// yet weaker than the data gradients near init, or the codes never leave
// zero. The depth coupling stays small because its gradient pushes along the
// ambiguous direction; the splat regularizers sum over prototypes, so their
// weights sit well below the per-pixel terms.
struct LossWeights {
  double w_l1 = 1.0;
  double w_lmk = 4.0;
  double w_normals = 0.2;
  double w_depth = 0.05;
  double w_offset = 0.01;
  double w_scale = 0.01;
  double w_opacity = 1e-4;
  double w_expr = 2e-3;
  double w_shape = 2e-3;
  double w_feature = 0.0;  // applied to every registered extractor

  void validate() const {
    for (double w : {w_l1, w_lmk, w_normals, w_depth, w_offset, w_scale,
                     w_opacity, w_expr, w_shape, w_feature})
      if (w < 0.0 || !std::isfinite(w))
        throw ValidationError("loss weights must be finite and nonnegative");
  }
};

struct LossReport {
  std::map<std::string, double> terms;  // unweighted values
  double total = 0.0;
  int iteration = 0;
};

/// Hook for plugged feature losses (identity/expression/perceptual style):
/// loss = 1 - cos(features(rendered), features(target)). Implementations
/// must provide the gradient of their loss w.r.t. the rendered image.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual VecX features(const ImageBuf& image) const = 0;
  /// dL/d(rendered image) for L = 1 - cosine(features(rendered), target_feat).
  virtual ImageBuf loss_backward(const ImageBuf& rendered,
                                 const VecX& target_features) const = 0;
};

inline double cosine_feature_loss(const VecX& a, const VecX& b) {
  double na = a.norm(), nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) return 1.0;
  return 1.0 - a.dot(b) / (na * nb);
}

// ---------------------------------------------------------------------------
// Photometric L1 with face-region emphasis: weight = 0.7 * mask + 0.3.
// ---------------------------------------------------------------------------

inline double photometric_l1(const ImageBuf& target, const ImageBuf& rendered,
                             const ImageBuf& face_mask) {
  if (!target.same_shape(rendered) || target.width != face_mask.width ||
      target.height != face_mask.height)
    throw ValidationError("photometric loss image shape mismatch");
  double sum = 0.0;
  for (int y = 0; y < target.height; ++y)
    for (int x = 0; x < target.width; ++x) {
      double wm = 0.7 * face_mask.at(x, y, 0) + 0.3;
      for (int c = 0; c < target.channels; ++c)
        sum += std::abs(target.at(x, y, c) - rendered.at(x, y, c)) * wm;
    }
  return sum / static_cast<double>(target.data.size());
}

/// Adds dL/d(rendered) into grad_rendered, pre-scaled by `weight`.
inline void photometric_l1_backward(const ImageBuf& target,
                                    const ImageBuf& rendered,
                                    const ImageBuf& face_mask, double weight,
                                    ImageBuf& grad_rendered) {
  double inv_n = 1.0 / static_cast<double>(target.data.size());
  for (int y = 0; y < target.height; ++y)
    for (int x = 0; x < target.width; ++x) {
      double wm = 0.7 * face_mask.at(x, y, 0) + 0.3;
      for (int c = 0; c < target.channels; ++c) {
        double d = rendered.at(x, y, c) - target.at(x, y, c);
        double s = (d > 0.0) ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        grad_rendered.at(x, y, c) += weight * inv_n * wm * s;
      }
    }
}

// ---------------------------------------------------------------------------
// Landmark loss: mean L1 over valid pairs, pixel coords normalized by the
// image size so the weight is resolution-independent.
// ---------------------------------------------------------------------------

inline double landmark_loss(const std::vector<ProjectedPoint>& predicted,
                            const std::vector<Vec2>& target, int width,
                            int height) {
  if (predicted.size() != target.size())
    throw ValidationError("landmark count mismatch");
  double sum = 0.0;
  int n_valid = 0;
  for (size_t i = 0; i < predicted.size(); ++i) {
    if (!predicted[i].valid) continue;
    sum += std::abs(predicted[i].pixel.x() - target[i].x()) / width +
           std::abs(predicted[i].pixel.y() - target[i].y()) / height;
    ++n_valid;
  }
  if (n_valid == 0) return 0.0;
  return sum / (2.0 * n_valid);
}

inline std::vector<Vec2> landmark_loss_backward(
    const std::vector<ProjectedPoint>& predicted,
    const std::vector<Vec2>& target, int width, int height, double weight) {
  int n_valid = 0;
  for (const auto& p : predicted) n_valid += p.valid ? 1 : 0;
  std::vector<Vec2> grads(predicted.size(), Vec2::Zero());
  if (n_valid == 0) return grads;
  double scale = weight / (2.0 * n_valid);
  for (size_t i = 0; i < predicted.size(); ++i) {
    if (!predicted[i].valid) continue;
    Vec2 d = predicted[i].pixel - target[i];
    grads[i].x() = scale * ((d.x() > 0.0) ? 1.0 : (d.x() < 0.0 ? -1.0 : 0.0)) / width;
    grads[i].y() = scale * ((d.y() > 0.0) ? 1.0 : (d.y() < 0.0 ? -1.0 : 0.0)) / height;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Geometry coupling: splat normal/depth buffers vs. rasterized mesh, over
// pixels that are both mesh-covered and inside the face region. The mesh
// buffers are fixed supervision targets; gradients flow into the splat
// branch only.
// ---------------------------------------------------------------------------

struct CouplingLoss {
  double normals = 0.0;
  double depth = 0.0;
};

inline CouplingLoss coupling_losses(const RenderBuffers& gauss,
                                    const MeshBuffers& mesh) {
  if (gauss.depth.width != mesh.depth.width ||
      gauss.depth.height != mesh.depth.height)
    throw ValidationError("coupling buffers shape mismatch");
  CouplingLoss out;
  int64_t n_pix = 0;
  for (int y = 0; y < mesh.depth.height; ++y)
    for (int x = 0; x < mesh.depth.width; ++x) {
      ++n_pix;
      if (mesh.coverage.at(x, y, 0) == 0.0 || mesh.face_mask.at(x, y, 0) == 0.0)
        continue;
      for (int c = 0; c < 3; ++c)
        out.normals +=
            std::abs(gauss.normal.at(x, y, c) - mesh.normal.at(x, y, c));
      out.depth += std::abs(gauss.depth.at(x, y, 0) - mesh.depth.at(x, y, 0));
    }
  // Means over masked pixels, so the constant-offset example is exact.
  int64_t n_masked = 0;
  for (int y = 0; y < mesh.depth.height; ++y)
    for (int x = 0; x < mesh.depth.width; ++x)
      if (mesh.coverage.at(x, y, 0) != 0.0 && mesh.face_mask.at(x, y, 0) != 0.0)
        ++n_masked;
  if (n_masked > 0) {
    out.normals /= static_cast<double>(3 * n_masked);
    out.depth /= static_cast<double>(n_masked);
  }
  return out;
}

/// Adds coupling gradients into the splat-branch buffer gradients.
inline void coupling_losses_backward(const RenderBuffers& gauss,
                                     const MeshBuffers& mesh, double w_normals,
                                     double w_depth,
                                     RenderBuffers& grad_gauss) {
  int64_t n_masked = 0;
  for (int y = 0; y < mesh.depth.height; ++y)
    for (int x = 0; x < mesh.depth.width; ++x)
      if (mesh.coverage.at(x, y, 0) != 0.0 && mesh.face_mask.at(x, y, 0) != 0.0)
        ++n_masked;
  if (n_masked == 0) return;
  double sn = w_normals / static_cast<double>(3 * n_masked);
  double sd = w_depth / static_cast<double>(n_masked);
  auto sign = [](double v) { return (v > 0.0) ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  for (int y = 0; y < mesh.depth.height; ++y)
    for (int x = 0; x < mesh.depth.width; ++x) {
      if (mesh.coverage.at(x, y, 0) == 0.0 || mesh.face_mask.at(x, y, 0) == 0.0)
        continue;
      for (int c = 0; c < 3; ++c)
        grad_gauss.normal.at(x, y, c) +=
            sn * sign(gauss.normal.at(x, y, c) - mesh.normal.at(x, y, c));
      grad_gauss.depth.at(x, y, 0) +=
          sd * sign(gauss.depth.at(x, y, 0) - mesh.depth.at(x, y, 0));
    }
}

// ---------------------------------------------------------------------------
// Splat regularizers: offset norm, scale-deviation norm, opacity Beta NLL.
// The scale term penalizes world-scale excess over a per-prototype reference
// (absolute log-scale collapses splats); switchable to the raw norm.
// ---------------------------------------------------------------------------

struct SplatRegTerms {
  double offset = 0.0;
  double scale = 0.0;
  double opacity = 0.0;
};

enum class ScaleRegMode { kDeviation, kRaw };

/// Per-prototype reference: world scales at initialization.
inline SplatRegTerms gaussian_reg(const std::vector<GaussianPrototype>& protos,
                                  const std::vector<TriangleFrame>& rest_frames,
                                  const std::vector<Vec2>& ref_log_scales,
                                  ScaleRegMode mode) {
  if (ref_log_scales.size() != protos.size())
    throw ValidationError("scale reference count mismatch");
  SplatRegTerms out;
  for (size_t i = 0; i < protos.size(); ++i) {
    const auto& p = protos[i];
    out.offset += p.offset.norm();
    const TriangleFrame& f = rest_frames[static_cast<size_t>(p.parent_face)];
    Vec2 s_world(f.scale[0] * std::exp(p.log_scale[0]),
                 f.scale[1] * std::exp(p.log_scale[1]));
    if (mode == ScaleRegMode::kDeviation) {
      Vec2 ref(f.scale[0] * std::exp(ref_log_scales[i][0]),
               f.scale[1] * std::exp(ref_log_scales[i][1]));
      out.scale += (s_world - ref).norm();
    } else {
      out.scale += s_world.norm();
    }
    out.opacity += beta_nll(p.opacity());
  }
  return out;
}

inline void gaussian_reg_backward(const std::vector<GaussianPrototype>& protos,
                                  const std::vector<TriangleFrame>& rest_frames,
                                  const std::vector<Vec2>& ref_log_scales,
                                  ScaleRegMode mode, double w_offset,
                                  double w_scale, double w_opacity,
                                  std::vector<PrototypeGrad>& grads) {
  for (size_t i = 0; i < protos.size(); ++i) {
    const auto& p = protos[i];
    PrototypeGrad& g = grads[i];
    g.offset += w_offset * safe_norm_grad(p.offset);
    const TriangleFrame& f = rest_frames[static_cast<size_t>(p.parent_face)];
    Vec2 s_world(f.scale[0] * std::exp(p.log_scale[0]),
                 f.scale[1] * std::exp(p.log_scale[1]));
    Vec2 diff = s_world;
    if (mode == ScaleRegMode::kDeviation) {
      Vec2 ref(f.scale[0] * std::exp(ref_log_scales[i][0]),
               f.scale[1] * std::exp(ref_log_scales[i][1]));
      diff = s_world - ref;
    }
    double dn = diff.norm();
    if (dn > 1e-12) {
      Vec2 g_sw = w_scale * diff / dn;
      // ds_world/dlog_scale = s_world
      g.log_scale[0] += g_sw[0] * s_world[0];
      g.log_scale[1] += g_sw[1] * s_world[1];
    }
    double sig = p.opacity();
    g.opacity_logit +=
        w_opacity * beta_nll_backward(sig) * sig * (1.0 - sig);
  }
}

// ---------------------------------------------------------------------------
// Shape/expression code regularizer: weighted Euclidean norms.
// ---------------------------------------------------------------------------

inline double code_reg(const VecX& code) { return code.norm(); }

inline VecX code_reg_backward(const VecX& code, double weight) {
  double n = code.norm();
  if (n < 1e-12) return VecX::Zero(code.size());
  return (weight / n) * code;
}

inline double weighted_total(const LossReport& r, const LossWeights& w) {
  double total = 0.0;
  auto get = [&](const std::string& k) {
    auto it = r.terms.find(k);
    return it == r.terms.end() ? 0.0 : it->second;
  };
  total += w.w_l1 * get("l1");
  total += w.w_lmk * get("landmark");
  total += w.w_normals * get("normals");
  total += w.w_depth * get("depth");
  total += w.w_offset * get("reg_offset");
  total += w.w_scale * get("reg_scale");
  total += w.w_opacity * get("reg_opacity");
  total += w.w_expr * get("reg_expr");
  total += w.w_shape * get("reg_shape");
  for (const auto& [k, v] : r.terms)
    if (k.rfind("feat_", 0) == 0) total += w.w_feature * v;
  return total;
}

}  // namespace splatrig
