#pragma once

#include "splatrig/adam.hpp"
#include "splatrig/blendshape.hpp"
#include "splatrig/core.hpp"
#include "splatrig/gaussian_rig.hpp"
#include "splatrig/io_checkpoint.hpp"
#include "splatrig/mesh_raster.hpp"
#include "splatrig/objective.hpp"
#include "splatrig/shading.hpp"
#include "splatrig/splat_render.hpp"

#include <functional>
#include <memory>

namespace splatrig {

// ---------------------------------------------------------------------------
// Analysis-by-synthesis fitting: pose mesh -> triangle frames -> bind splats
// -> shade -> render, compared against target images/landmarks, with
// hand-written reverse-mode gradients through the whole chain. Parameter
// groups (splats, shape, expression, pose, lighting) each run their own Adam
// state; expression and pose are per frame, shape/splats/lighting shared.
// ---------------------------------------------------------------------------

struct FitConfig {
  int iterations = 2000;
  int resolution = 512;  // used by dataset generation; fit adopts the targets'
  double lr_splats = 1e-3;
  double lr_shape = 1e-3;
  double lr_expr = 1e-3;
  double lr_pose = 1e-3;
  double lr_lighting = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int t_densify = 200;
  int t_history = 100;
  int n_prune = 4;
  int n_densify = 4;
  double noise_scale = 0.05;
  LossWeights weights;
  RenderSettings render;
  ScaleRegMode scale_reg_mode = ScaleRegMode::kDeviation;
  // Mesh-rendered normal/depth/mask enter the loss as detached supervision
  // targets; flipping this to route gradients through the mesh rasterizer is
  // not supported (the rasterizer is not differentiable by design).
  bool detach_mesh_targets = true;
  uint64_t seed = 0;

  void validate() const {
    if (iterations < 0) throw ValidationError("iterations must be >= 0");
    if (resolution < 16) throw ValidationError("resolution must be >= 16");
    for (double lr : {lr_splats, lr_shape, lr_expr, lr_pose, lr_lighting})
      if (lr < 0.0 || !std::isfinite(lr))
        throw ValidationError("learning rates must be finite and >= 0");
    if (t_densify < 0 || t_history < 1)
      throw ValidationError("densify schedule must be nonnegative");
    if (n_prune < 0 || n_densify < 0)
      throw ValidationError("densify counts must be nonnegative");
    if (!detach_mesh_targets)
      throw ValidationError(
          "detach_mesh_targets = false requires a differentiable mesh "
          "rasterizer, which this build does not provide");
    weights.validate();
  }
};

struct FrameTarget {
  ImageBuf image;                // H x W x 3, background already composited
  std::vector<Vec2> landmarks;   // pixel coords
  Camera camera;
  ImageBuf external_mask;        // optional H x W face mask; empty = use mesh
  VecX target_features;          // cached per registered extractor, managed by fit

  bool has_external_mask() const { return !external_mask.data.empty(); }
};

struct FitState {
  std::vector<GaussianPrototype> protos;
  std::vector<Vec2> ref_log_scales;  // scale-regularizer reference
  VecX beta;
  std::vector<VecX> psi;    // per frame
  std::vector<Pose> poses;  // per frame
  VecX lighting;
  AdamState adam_splats, adam_shape, adam_expr, adam_pose, adam_lighting;
  DensifyStats stats;
  int64_t iteration = 0;
  uint64_t seed = 0;

  int n_frames() const { return static_cast<int>(psi.size()); }
};

struct ObjectiveGrads {
  std::vector<PrototypeGrad> protos;
  VecX beta;
  std::vector<VecX> psi;
  std::vector<PoseGrad> poses;
  VecX lighting;
};

// ---------------------------------------------------------------------------
// Parameter flattening. Layout per prototype (13):
// offset xyz, rotation wxyz, log-scale uv, opacity logit, albedo rgb.
// Pose (11): rotation wxyz, translation xyz, neck rotation wxyz.
// ---------------------------------------------------------------------------

inline constexpr int kProtoParams = 13;
inline constexpr int kPoseParams = 11;

inline VecX flatten_protos(const std::vector<GaussianPrototype>& ps) {
  VecX v(kProtoParams * static_cast<Eigen::Index>(ps.size()));
  for (size_t i = 0; i < ps.size(); ++i) {
    Eigen::Index o = kProtoParams * static_cast<Eigen::Index>(i);
    v.segment<3>(o) = ps[i].offset;
    v.segment<4>(o + 3) = ps[i].rotation;
    v.segment<2>(o + 7) = ps[i].log_scale;
    v[o + 9] = ps[i].opacity_logit;
    v.segment<3>(o + 10) = ps[i].albedo;
  }
  return v;
}

inline void unflatten_protos(const VecX& v,
                             std::vector<GaussianPrototype>& ps) {
  for (size_t i = 0; i < ps.size(); ++i) {
    Eigen::Index o = kProtoParams * static_cast<Eigen::Index>(i);
    ps[i].offset = v.segment<3>(o);
    ps[i].rotation = v.segment<4>(o + 3);
    ps[i].log_scale = v.segment<2>(o + 7);
    ps[i].opacity_logit = v[o + 9];
    ps[i].albedo = v.segment<3>(o + 10);
  }
}

inline VecX flatten_proto_grads(const std::vector<PrototypeGrad>& gs) {
  VecX v(kProtoParams * static_cast<Eigen::Index>(gs.size()));
  for (size_t i = 0; i < gs.size(); ++i) {
    Eigen::Index o = kProtoParams * static_cast<Eigen::Index>(i);
    v.segment<3>(o) = gs[i].offset;
    v.segment<4>(o + 3) = gs[i].rotation;
    v.segment<2>(o + 7) = gs[i].log_scale;
    v[o + 9] = gs[i].opacity_logit;
    v.segment<3>(o + 10) = gs[i].albedo;
  }
  return v;
}

inline VecX flatten_pose(const Pose& p) {
  VecX v(kPoseParams);
  v.segment<4>(0) = p.rotation;
  v.segment<3>(4) = p.translation;
  v.segment<4>(7) = p.neck_rotation;
  return v;
}

inline void unflatten_pose(const VecX& v, Pose& p) {
  p.rotation = v.segment<4>(0);
  p.translation = v.segment<3>(4);
  p.neck_rotation = v.segment<4>(7);
}

inline VecX flatten_pose_grad(const PoseGrad& g) {
  VecX v(kPoseParams);
  v.segment<4>(0) = g.rotation;
  v.segment<3>(4) = g.translation;
  v.segment<4>(7) = g.neck_rotation;
  return v;
}

// ---------------------------------------------------------------------------
// Forward pass for one frame.
// ---------------------------------------------------------------------------

struct FrameForward {
  std::vector<Vec3> vertices;
  std::vector<TriangleFrame> frames;
  std::vector<WorldSplat> splats;
  std::vector<Vec3> shaded;  // per-splat composited color
  RenderBuffers buffers{8, 8};
  MeshBuffers mesh{8, 8};
  std::vector<ProjectedPoint> landmarks;
  int n_skipped_splats = 0;
};

inline FrameForward forward_frame(const BlendshapeModel& model,
                                  const LightingPrior& prior,
                                  const FitState& st, int frame,
                                  const Camera& camera,
                                  const RenderSettings& render,
                                  const Vec3& background,
                                  bool with_mesh = true) {
  FrameForward fw;
  fw.vertices = pose_mesh(model, st.beta, st.psi[static_cast<size_t>(frame)],
                          st.poses[static_cast<size_t>(frame)]);
  fw.frames = triangle_frames(fw.vertices, model.faces);
  fw.splats = bind_splats(st.protos, fw.frames, &fw.n_skipped_splats);
  ShCoeffs w = lighting_coeffs(prior, st.lighting);
  fw.shaded.resize(fw.splats.size());
  for (size_t i = 0; i < fw.splats.size(); ++i)
    fw.shaded[i] = fw.splats[i].valid
                       ? shade(fw.splats[i].albedo,
                               fw.splats[i].rotation.col(2), w)
                       : Vec3::Zero();
  fw.buffers = render_splats(fw.splats, camera, background, render, &fw.shaded);
  if (with_mesh)
    fw.mesh = rasterize_mesh(fw.vertices, model.faces, model.face_region,
                             camera, render.n_threads);
  fw.landmarks = project_points(landmarks_3d(fw.vertices, model), camera);
  return fw;
}

// ---------------------------------------------------------------------------
// Objective evaluation with optional gradients. Frame losses are averaged
// over frames; regularizers enter once (the expression regularizer as a
// per-frame mean). When `fixed_mesh` is provided those buffers replace the
// live mesh raster as the (detached) supervision targets, which keeps the
// differentiated functional fixed for finite-difference checks.
// ---------------------------------------------------------------------------

struct ObjectiveOptions {
  const std::vector<MeshBuffers>* fixed_mesh = nullptr;
  ObjectiveGrads* grads = nullptr;
  std::vector<double>* center_grad_norms = nullptr;  // per proto, frame-mean
  std::vector<RenderBuffers>* out_buffers = nullptr;
  const std::vector<std::shared_ptr<FeatureExtractor>>* extractors = nullptr;
};

inline LossReport evaluate_objective(const BlendshapeModel& model,
                                     const LightingPrior& prior,
                                     const std::vector<FrameTarget>& targets,
                                     const Vec3& background,
                                     const FitState& st, const FitConfig& cfg,
                                     const ObjectiveOptions& opt = {}) {
  if (targets.empty()) throw ValidationError("objective needs >= 1 frame");
  if (st.n_frames() != static_cast<int>(targets.size()))
    throw ValidationError("state frame count does not match targets");
  const int n_frames = static_cast<int>(targets.size());
  const double inv_f = 1.0 / n_frames;
  const LossWeights& w = cfg.weights;

  ObjectiveGrads* g = opt.grads;
  if (g) {
    g->protos.assign(st.protos.size(), PrototypeGrad());
    g->beta = VecX::Zero(st.beta.size());
    g->psi.assign(static_cast<size_t>(n_frames), VecX());
    g->poses.assign(static_cast<size_t>(n_frames), PoseGrad());
    g->lighting = VecX::Zero(st.lighting.size());
  }
  if (opt.center_grad_norms)
    opt.center_grad_norms->assign(st.protos.size(), 0.0);

  LossReport report;
  auto add_term = [&](const std::string& k, double v) { report.terms[k] += v; };
  add_term("l1", 0.0);
  add_term("landmark", 0.0);
  add_term("normals", 0.0);
  add_term("depth", 0.0);

  ShCoeffs w_sh = lighting_coeffs(prior, st.lighting);
  ShCoeffs grad_w_sh = ShCoeffs::Zero();

  for (int f = 0; f < n_frames; ++f) {
    const FrameTarget& tgt = targets[static_cast<size_t>(f)];
    FrameForward fw = forward_frame(model, prior, st, f, tgt.camera,
                                    cfg.render, background,
                                    opt.fixed_mesh == nullptr);

    // Face mask: external, or live mesh raster, or frozen targets.
    const MeshBuffers& mesh_tgt =
        opt.fixed_mesh ? (*opt.fixed_mesh)[static_cast<size_t>(f)] : fw.mesh;
    const ImageBuf& mask =
        tgt.has_external_mask() ? tgt.external_mask : mesh_tgt.face_mask;

    double l1 = photometric_l1(tgt.image, fw.buffers.color, mask);
    double lmk = landmark_loss(fw.landmarks, tgt.landmarks, tgt.camera.width,
                               tgt.camera.height);
    CouplingLoss coup = coupling_losses(fw.buffers, mesh_tgt);
    add_term("l1", l1 * inv_f);
    add_term("landmark", lmk * inv_f);
    add_term("normals", coup.normals * inv_f);
    add_term("depth", coup.depth * inv_f);
    add_term("reg_expr",
             code_reg(st.psi[static_cast<size_t>(f)]) * inv_f);

    if (opt.extractors)
      for (const auto& ex : *opt.extractors) {
        VecX feat = ex->features(fw.buffers.color);
        // Target features are cached on the FrameTarget by the fit loop.
        add_term("feat_" + ex->name(),
                 cosine_feature_loss(feat, tgt.target_features) * inv_f);
      }

    if (opt.out_buffers) opt.out_buffers->push_back(fw.buffers);
    if (!g && !opt.center_grad_norms) continue;

    // ---- Backward through this frame ----
    RenderBuffers up(tgt.camera.width, tgt.camera.height);
    photometric_l1_backward(tgt.image, fw.buffers.color, mask,
                            w.w_l1 * inv_f, up.color);
    coupling_losses_backward(fw.buffers, mesh_tgt, w.w_normals * inv_f,
                             w.w_depth * inv_f, up);
    if (opt.extractors)
      for (const auto& ex : *opt.extractors) {
        ImageBuf gi = ex->loss_backward(fw.buffers.color, tgt.target_features);
        if (!gi.same_shape(up.color))
          throw ValidationError("feature extractor gradient shape mismatch");
        double s = w.w_feature * inv_f;
        for (size_t i = 0; i < gi.data.size(); ++i)
          up.color.data[i] += s * gi.data[i];
      }

    std::vector<WorldSplatGrad> grad_splats;
    std::vector<Vec3> grad_colors;
    render_splats_backward(fw.splats, tgt.camera, background, up, grad_splats,
                           grad_colors, cfg.render, &fw.shaded);

    if (opt.center_grad_norms)
      for (size_t i = 0; i < grad_splats.size(); ++i)
        (*opt.center_grad_norms)[i] += grad_splats[i].center.norm() * inv_f;

    if (!g) continue;

    // Shading backward: color grads split into albedo, normal, lighting.
    for (size_t i = 0; i < fw.splats.size(); ++i) {
      if (!fw.splats[i].valid) continue;
      Vec3 ga, gn;
      ShCoeffs gw;
      shade_backward(fw.splats[i].albedo, fw.splats[i].rotation.col(2), w_sh,
                     grad_colors[i], ga, gn, gw);
      grad_splats[i].albedo += ga;
      grad_splats[i].rotation.col(2) += gn;
      grad_w_sh += gw;
    }

    std::vector<PrototypeGrad> gp;
    std::vector<TriangleFrameGrad> gf(fw.frames.size());
    bind_splats_backward(st.protos, fw.frames, grad_splats, gp, gf);
    for (size_t i = 0; i < gp.size(); ++i) {
      g->protos[i].offset += gp[i].offset;
      g->protos[i].rotation += gp[i].rotation;
      g->protos[i].log_scale += gp[i].log_scale;
      g->protos[i].opacity_logit += gp[i].opacity_logit;
      g->protos[i].albedo += gp[i].albedo;
    }

    std::vector<Vec3> grad_verts(fw.vertices.size(), Vec3::Zero());
    for (size_t fi = 0; fi < fw.frames.size(); ++fi) {
      const auto& face = model.faces[fi];
      triangle_frame_backward(
          fw.vertices[static_cast<size_t>(face[0])],
          fw.vertices[static_cast<size_t>(face[1])],
          fw.vertices[static_cast<size_t>(face[2])], gf[fi],
          grad_verts[static_cast<size_t>(face[0])],
          grad_verts[static_cast<size_t>(face[1])],
          grad_verts[static_cast<size_t>(face[2])]);
    }

    // Landmark branch.
    std::vector<Vec2> grad_px = landmark_loss_backward(
        fw.landmarks, tgt.landmarks, tgt.camera.width, tgt.camera.height,
        w.w_lmk * inv_f);
    std::vector<Vec3> lm3d = landmarks_3d(fw.vertices, model);
    std::vector<Vec3> grad_lm3d =
        project_points_backward(lm3d, tgt.camera, grad_px);
    landmarks_3d_backward(grad_lm3d, model, grad_verts);

    VecX gb, gpsi;
    PoseGrad gpose;
    pose_mesh_backward(model, st.beta, st.psi[static_cast<size_t>(f)],
                       st.poses[static_cast<size_t>(f)], grad_verts, gb, gpsi,
                       gpose);
    g->beta += gb;
    g->psi[static_cast<size_t>(f)] = gpsi;
    g->poses[static_cast<size_t>(f)] = gpose;

    // Expression code regularizer (per-frame mean).
    g->psi[static_cast<size_t>(f)] +=
        code_reg_backward(st.psi[static_cast<size_t>(f)], w.w_expr * inv_f);
  }

  // Regularizers entering once.
  std::vector<TriangleFrame> rest_frames =
      triangle_frames(model.base_vertices, model.faces);
  SplatRegTerms reg = gaussian_reg(st.protos, rest_frames, st.ref_log_scales,
                                   cfg.scale_reg_mode);
  add_term("reg_offset", reg.offset);
  add_term("reg_scale", reg.scale);
  add_term("reg_opacity", reg.opacity);
  add_term("reg_shape", code_reg(st.beta));

  if (g) {
    gaussian_reg_backward(st.protos, rest_frames, st.ref_log_scales,
                          cfg.scale_reg_mode, w.w_offset, w.w_scale,
                          w.w_opacity, g->protos);
    g->beta += code_reg_backward(st.beta, w.w_shape);
    g->lighting = lighting_coeffs_backward(prior, grad_w_sh);
  }

  report.total = weighted_total(report, w);
  report.iteration = static_cast<int>(st.iteration);
  return report;
}

// ---------------------------------------------------------------------------
// State initialization and the optimization loop.
// ---------------------------------------------------------------------------

inline FitState init_fit_state(const BlendshapeModel& model, int n_frames,
                               int lighting_dim, const FitConfig& cfg,
                               const Pose& init_pose = Pose()) {
  FitState st;
  std::vector<TriangleFrame> rest =
      triangle_frames(model.base_vertices, model.faces);
  st.protos = init_prototypes(model.base_vertices, model.faces, rest);
  st.ref_log_scales.resize(st.protos.size());
  for (size_t i = 0; i < st.protos.size(); ++i)
    st.ref_log_scales[i] = st.protos[i].log_scale;
  st.beta = VecX::Zero(model.k_shape());
  st.psi.assign(static_cast<size_t>(n_frames), VecX::Zero(model.k_expr()));
  st.poses.assign(static_cast<size_t>(n_frames), init_pose);
  st.lighting = VecX::Zero(lighting_dim);
  st.stats.window = cfg.t_history;
  st.stats.reset(st.protos.size());
  st.seed = cfg.seed;
  return st;
}

struct DensifyEvent {
  int64_t iteration = 0;
  DensifyOutcome outcome;
  std::vector<int> face_counts_after;
  size_t count_before = 0;
  size_t count_after = 0;
};

struct FitResult {
  FitState state;
  std::vector<LossReport> reports;
  std::vector<DensifyEvent> densify_events;
};

/// Remaps the flat splat Adam moments after a densify/prune event: survivors
/// keep their rows, clones start from zero.
inline void remap_splat_moments(AdamState& adam, size_t old_count,
                                const DensifyOutcome& outcome,
                                size_t new_count) {
  if (adam.m.size() == 0) return;
  std::vector<char> removed(old_count, 0);
  for (int idx : outcome.removed_indices)
    removed[static_cast<size_t>(idx)] = 1;
  VecX m2 = VecX::Zero(kProtoParams * static_cast<Eigen::Index>(new_count));
  VecX v2 = VecX::Zero(kProtoParams * static_cast<Eigen::Index>(new_count));
  Eigen::Index dst = 0;
  for (size_t i = 0; i < old_count; ++i) {
    if (removed[i]) continue;
    m2.segment(dst, kProtoParams) =
        adam.m.segment(kProtoParams * static_cast<Eigen::Index>(i), kProtoParams);
    v2.segment(dst, kProtoParams) =
        adam.v.segment(kProtoParams * static_cast<Eigen::Index>(i), kProtoParams);
    dst += kProtoParams;
  }
  adam.m = m2;  // clone rows stay zero
  adam.v = v2;
}

// Renormalizes in place; a no-op (bitwise) when already normalized so that
// zero-gradient iterations leave the state untouched.
inline void renormalize_quat(Vec4& q) {
  double n = q.norm();
  if (n < 1e-12) q = quat_identity();
  else if (std::abs(n - 1.0) > 1e-12) q /= n;
}

inline void normalize_state(FitState& st) {
  for (auto& p : st.protos) {
    renormalize_quat(p.rotation);
    p.albedo = p.albedo.cwiseMax(0.0).cwiseMin(1.0);
  }
  for (auto& pose : st.poses) {
    renormalize_quat(pose.rotation);
    renormalize_quat(pose.neck_rotation);
  }
}

inline FitResult fit(const BlendshapeModel& model, const LightingPrior& prior,
                     std::vector<FrameTarget>& targets, const Vec3& background,
                     FitState st, const FitConfig& cfg,
                     const std::function<void(const LossReport&)>& on_report =
                         nullptr,
                     const std::vector<std::shared_ptr<FeatureExtractor>>&
                         extractors = {}) {
  cfg.validate();
  for (const auto& t : targets) {
    t.camera.validate();
    if (t.camera.width < 16 || t.camera.height < 16)
      throw ValidationError("fit resolution must be >= 16");
    if (t.image.width != t.camera.width || t.image.height != t.camera.height ||
        t.image.channels != 3)
      throw ValidationError("target image shape does not match camera");
  }

  // Cache target features for plugged extractors.
  if (!extractors.empty()) {
    if (extractors.size() > 1)
      throw ValidationError("one feature extractor per fit is supported");
    for (auto& t : targets)
      t.target_features = extractors[0]->features(t.image);
  }

  Rng rng = Rng(cfg.seed).substream("densify");
  AdamConfig ac_splats{cfg.lr_splats, cfg.adam_beta1, cfg.adam_beta2,
                       cfg.adam_eps};
  AdamConfig ac_shape{cfg.lr_shape, cfg.adam_beta1, cfg.adam_beta2,
                      cfg.adam_eps};
  AdamConfig ac_expr{cfg.lr_expr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  AdamConfig ac_pose{cfg.lr_pose, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  AdamConfig ac_light{cfg.lr_lighting, cfg.adam_beta1, cfg.adam_beta2,
                      cfg.adam_eps};

  FitResult result;
  st.stats.window = cfg.t_history;
  if (st.stats.opacity_hist.size() != st.protos.size())
    st.stats.reset(st.protos.size());

  const int n_frames = st.n_frames();
  for (int64_t it = 0; it < cfg.iterations; ++it) {
    ObjectiveGrads grads;
    std::vector<double> center_norms;
    ObjectiveOptions opt;
    opt.grads = &grads;
    opt.center_grad_norms = &center_norms;
    if (!extractors.empty()) opt.extractors = &extractors;
    LossReport report =
        evaluate_objective(model, prior, targets, background, st, cfg, opt);
    report.iteration = static_cast<int>(it);

    if (!std::isfinite(report.total)) {
      std::string dump = "non-finite loss at iteration " + std::to_string(it);
      for (const auto& [k, v] : report.terms)
        if (!std::isfinite(v)) dump += "; term '" + k + "' = " + std::to_string(v);
      throw NumericalError(dump);
    }
    result.reports.push_back(report);
    if (on_report) on_report(report);

    // Densification statistics use the pre-update opacities and the
    // frame-averaged world-center gradient magnitudes.
    std::vector<double> opacities(st.protos.size());
    for (size_t i = 0; i < st.protos.size(); ++i)
      opacities[i] = st.protos[i].opacity();
    st.stats.push(opacities, center_norms);

    // Adam over each group; lr = 0 freezes a group bitwise.
    if (cfg.lr_splats > 0.0 && !st.protos.empty()) {
      VecX params = flatten_protos(st.protos);
      VecX gv = flatten_proto_grads(grads.protos);
      adam_step(params, gv, st.adam_splats, ac_splats);
      unflatten_protos(params, st.protos);
    }
    if (cfg.lr_shape > 0.0 && st.beta.size() > 0)
      adam_step(st.beta, grads.beta, st.adam_shape, ac_shape);
    if (cfg.lr_expr > 0.0 && n_frames > 0 && st.psi[0].size() > 0) {
      VecX flat(st.psi[0].size() * n_frames), gflat(flat.size());
      for (int f = 0; f < n_frames; ++f) {
        flat.segment(f * st.psi[0].size(), st.psi[0].size()) =
            st.psi[static_cast<size_t>(f)];
        gflat.segment(f * st.psi[0].size(), st.psi[0].size()) =
            grads.psi[static_cast<size_t>(f)];
      }
      adam_step(flat, gflat, st.adam_expr, ac_expr);
      for (int f = 0; f < n_frames; ++f)
        st.psi[static_cast<size_t>(f)] =
            flat.segment(f * st.psi[0].size(), st.psi[0].size());
    }
    if (cfg.lr_pose > 0.0 && n_frames > 0) {
      VecX flat(kPoseParams * n_frames), gflat(flat.size());
      for (int f = 0; f < n_frames; ++f) {
        flat.segment<kPoseParams>(kPoseParams * f) =
            flatten_pose(st.poses[static_cast<size_t>(f)]);
        gflat.segment<kPoseParams>(kPoseParams * f) =
            flatten_pose_grad(grads.poses[static_cast<size_t>(f)]);
      }
      adam_step(flat, gflat, st.adam_pose, ac_pose);
      for (int f = 0; f < n_frames; ++f)
        unflatten_pose(flat.segment<kPoseParams>(kPoseParams * f),
                       st.poses[static_cast<size_t>(f)]);
    }
    if (cfg.lr_lighting > 0.0 && st.lighting.size() > 0)
      adam_step(st.lighting, grads.lighting, st.adam_lighting, ac_light);

    normalize_state(st);
    st.iteration = it + 1;

    if (cfg.t_densify > 0 && st.iteration % cfg.t_densify == 0 &&
        (cfg.n_prune > 0 || cfg.n_densify > 0)) {
      DensifyEvent ev;
      ev.iteration = st.iteration;
      ev.count_before = st.protos.size();
      size_t old_count = st.protos.size();
      std::vector<Vec2> old_refs = st.ref_log_scales;
      ev.outcome =
          densify_and_prune(st.protos, st.stats, model.n_faces(), cfg.n_prune,
                            cfg.n_densify, cfg.noise_scale, rng);
      remap_splat_moments(st.adam_splats, old_count, ev.outcome,
                          st.protos.size());
      // Scale-reg references follow the same survivor/clone mapping.
      std::vector<char> removed(old_count, 0);
      for (int idx : ev.outcome.removed_indices)
        removed[static_cast<size_t>(idx)] = 1;
      st.ref_log_scales.clear();
      for (size_t i = 0; i < old_count; ++i)
        if (!removed[i]) st.ref_log_scales.push_back(old_refs[i]);
      for (int src : ev.outcome.cloned_from)
        st.ref_log_scales.push_back(old_refs[static_cast<size_t>(src)]);

      ev.count_after = st.protos.size();
      ev.face_counts_after = face_splat_counts(st.protos, model.n_faces());
      result.densify_events.push_back(std::move(ev));
    }
  }

  result.state = std::move(st);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint conversion.
// ---------------------------------------------------------------------------

inline Checkpoint state_to_checkpoint(const FitState& st) {
  Checkpoint c;
  c.prototypes = st.protos;
  c.beta = st.beta;
  c.psi = st.psi;
  c.poses = st.poses;
  c.lighting = st.lighting;
  c.moments["splats"] = st.adam_splats;
  c.moments["shape"] = st.adam_shape;
  c.moments["expr"] = st.adam_expr;
  c.moments["pose"] = st.adam_pose;
  c.moments["lighting"] = st.adam_lighting;
  c.iteration = st.iteration;
  c.seed = st.seed;
  return c;
}

/// Rebuilds a FitState from a checkpoint. The scale-reg reference is
/// recomputed from the model's rest mesh (per parent face), matching how
/// prototypes were initialized.
inline FitState checkpoint_to_state(const Checkpoint& c,
                                    const BlendshapeModel& model,
                                    const FitConfig& cfg) {
  FitState st;
  st.protos = c.prototypes;
  st.beta = c.beta;
  st.psi = c.psi;
  st.poses = c.poses;
  st.lighting = c.lighting;
  auto find = [&](const char* k) {
    auto it = c.moments.find(k);
    return it == c.moments.end() ? AdamState() : it->second;
  };
  st.adam_splats = find("splats");
  st.adam_shape = find("shape");
  st.adam_expr = find("expr");
  st.adam_pose = find("pose");
  st.adam_lighting = find("lighting");
  st.iteration = c.iteration;
  st.seed = c.seed;
  std::vector<TriangleFrame> rest =
      triangle_frames(model.base_vertices, model.faces);
  st.ref_log_scales.resize(st.protos.size());
  for (size_t i = 0; i < st.protos.size(); ++i) {
    const auto& p = st.protos[i];
    if (p.parent_face < 0 || p.parent_face >= model.n_faces())
      throw ValidationError("checkpoint prototype parent face out of range");
    st.ref_log_scales[i] = init_log_scale_for_face(
        model.base_vertices, model.faces[static_cast<size_t>(p.parent_face)],
        rest[static_cast<size_t>(p.parent_face)]);
  }
  st.stats.window = cfg.t_history;
  st.stats.reset(st.protos.size());
  return st;
}

}  // namespace splatrig
