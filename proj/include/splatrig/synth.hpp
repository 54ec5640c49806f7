#pragma once

#include "splatrig/demo_head.hpp"
#include "splatrig/fit.hpp"
#include "splatrig/io_image.hpp"
#include "splatrig/io_model.hpp"
#include "splatrig/io_scan.hpp"
#include "splatrig/shading.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace splatrig {

// ---------------------------------------------------------------------------
// Synthetic dataset generator: renders a ground-truth parameterization of the
// procedural head into target frames (images, masks, landmarks), plus a
// surface scan in millimeters for the geometric evaluation. Everything is a
// pure function of the seed. The written `meta.json` also carries a
// deliberately perturbed initialization so a fit must actually recover the
// ground truth rather than start on top of it.
// ---------------------------------------------------------------------------

struct SynthConfig {
  int resolution = 128;
  int n_frames = 4;
  double fov_y_deg = 14.3;
  double camera_distance = 1.0;  // meters
  uint64_t seed = 1;
  int n_scan_points = 20000;
  double shape_magnitude = 1.2;     // |beta| of the ground truth
  double expr_magnitude = 0.6;      // |psi| per frame
  double pose_yaw_deg = 8.0;        // ground-truth yaw spread across frames
  double lighting_magnitude = 0.5;
  double albedo_variation = 0.1;
  double init_rot_deg = 1.5;        // pose error baked into the init block
  double init_trans_err = 0.004;    // meters

  void validate() const {
    if (resolution < 16) throw ValidationError("synth resolution must be >= 16");
    if (n_frames < 1) throw ValidationError("synth needs >= 1 frame");
    if (n_scan_points < 3) throw ValidationError("scan needs >= 3 points");
    if (fov_y_deg <= 0.0 || fov_y_deg >= 180.0)
      throw ValidationError("fov out of range");
    if (camera_distance <= 0.0)
      throw ValidationError("camera distance must be positive");
  }
};

struct SynthDataset {
  BlendshapeModel model;
  LightingPrior prior;
  Camera camera;
  Vec3 background = Vec3::Zero();
  std::vector<FrameTarget> targets;   // float images pre-quantization
  FitState gt_state;
  std::vector<Pose> init_poses;       // perturbed starting poses
  ScanCloud scan;                     // mm
  std::vector<Vec3> scan_landmarks;   // mm
  std::vector<Vec3> gt_vertices_frame0;
};

namespace synth_detail {

inline Vec4 small_rotation(Rng& rng, double max_deg) {
  Vec3 axis = rng.normal3();
  double n = axis.norm();
  axis = n < 1e-9 ? Vec3(0, 1, 0) : Vec3(axis / n);
  return quat_from_axis_angle(axis, deg_to_rad(rng.uniform(-max_deg, max_deg)));
}

inline VecX random_code(Rng& rng, Eigen::Index dim, double magnitude) {
  VecX v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = rng.normal();
  double n = v.norm();
  if (n < 1e-9) return VecX::Zero(dim);
  return v * (magnitude / n);
}

/// Area-weighted surface sampling; barycentrics via the sqrt trick.
inline std::vector<Vec3> sample_surface(const std::vector<Vec3>& verts,
                                        const std::vector<Eigen::Vector3i>& faces,
                                        int n_points, Rng& rng) {
  std::vector<double> cum(faces.size(), 0.0);
  double total = 0.0;
  for (size_t fi = 0; fi < faces.size(); ++fi) {
    const auto& f = faces[fi];
    Vec3 e1 = verts[static_cast<size_t>(f[1])] - verts[static_cast<size_t>(f[0])];
    Vec3 e2 = verts[static_cast<size_t>(f[2])] - verts[static_cast<size_t>(f[0])];
    total += 0.5 * e1.cross(e2).norm();
    cum[fi] = total;
  }
  if (total <= 0.0) throw RunError("degenerate mesh: zero surface area");
  std::vector<Vec3> out;
  out.reserve(static_cast<size_t>(n_points));
  for (int i = 0; i < n_points; ++i) {
    double u = rng.uniform(0.0, total);
    size_t fi = static_cast<size_t>(
        std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    if (fi >= faces.size()) fi = faces.size() - 1;
    const auto& f = faces[fi];
    double r1 = std::sqrt(rng.uniform(0.0, 1.0));
    double r2 = rng.uniform(0.0, 1.0);
    double b0 = 1.0 - r1, b1 = r1 * (1.0 - r2), b2 = r1 * r2;
    out.push_back(b0 * verts[static_cast<size_t>(f[0])] +
                  b1 * verts[static_cast<size_t>(f[1])] +
                  b2 * verts[static_cast<size_t>(f[2])]);
  }
  return out;
}

}  // namespace synth_detail

inline SynthDataset make_synth_dataset(const SynthConfig& cfg) {
  using namespace synth_detail;
  cfg.validate();
  SynthDataset ds;
  ds.model = make_demo_head();
  ds.prior = make_default_prior();
  ds.camera = make_front_camera(cfg.resolution, cfg.resolution, cfg.fov_y_deg,
                                cfg.camera_distance);

  Rng root(cfg.seed);
  Rng rng_bg = root.substream("background");
  Rng rng_code = root.substream("codes");
  Rng rng_splat = root.substream("splats");
  Rng rng_pose = root.substream("poses");
  Rng rng_scan = root.substream("scan");
  Rng rng_init = root.substream("init");

  ds.background =
      Vec3(rng_bg.uniform(0.0, 1.0), rng_bg.uniform(0.0, 1.0),
           rng_bg.uniform(0.0, 1.0));

  // Ground-truth state.
  FitConfig fit_cfg;
  fit_cfg.resolution = cfg.resolution;
  FitState gt = init_fit_state(ds.model, cfg.n_frames, ds.prior.dim(), fit_cfg);
  gt.beta = random_code(rng_code, ds.model.k_shape(), cfg.shape_magnitude);
  for (int f = 0; f < cfg.n_frames; ++f)
    gt.psi[static_cast<size_t>(f)] =
        random_code(rng_code, ds.model.k_expr(), cfg.expr_magnitude);
  gt.lighting = random_code(rng_code, ds.prior.dim(), cfg.lighting_magnitude);

  const Vec3 skin(0.80, 0.62, 0.52);
  for (auto& p : gt.protos) {
    for (int c = 0; c < 3; ++c)
      p.albedo[c] = std::min(0.95, std::max(0.05,
          skin[c] + rng_splat.uniform(-cfg.albedo_variation,
                                      cfg.albedo_variation)));
    p.opacity_logit = 2.0 + rng_splat.uniform(-0.3, 0.3);  // sigma ~ 0.88
    p.offset += 0.1 * rng_splat.normal3();
    p.log_scale += Vec2(rng_splat.uniform(-0.15, 0.15),
                        rng_splat.uniform(-0.15, 0.15));
  }

  for (int f = 0; f < cfg.n_frames; ++f) {
    Pose& pose = gt.poses[static_cast<size_t>(f)];
    double yaw = cfg.n_frames == 1
                     ? 0.0
                     : cfg.pose_yaw_deg * (2.0 * f / (cfg.n_frames - 1) - 1.0);
    pose.rotation = quat_from_axis_angle(Vec3(0, 1, 0), deg_to_rad(yaw));
    pose.translation = 0.002 * rng_pose.normal3();
    pose.neck_rotation = small_rotation(rng_pose, 2.0);
  }

  // Rendered targets (float; quantization happens at PNG export).
  ds.targets.resize(static_cast<size_t>(cfg.n_frames));
  RenderSettings rs;
  for (int f = 0; f < cfg.n_frames; ++f) {
    FrameForward fw = forward_frame(ds.model, ds.prior, gt, f, ds.camera, rs,
                                    ds.background);
    FrameTarget& t = ds.targets[static_cast<size_t>(f)];
    t.camera = ds.camera;
    t.image = fw.buffers.color;
    for (double& v : t.image.data) v = std::min(1.0, std::max(0.0, v));
    t.external_mask = fw.mesh.face_mask;
    t.landmarks.resize(fw.landmarks.size());
    for (size_t i = 0; i < fw.landmarks.size(); ++i)
      t.landmarks[i] = fw.landmarks[i].pixel;
    if (f == 0) ds.gt_vertices_frame0 = fw.vertices;
  }

  // Scan of the frame-0 geometry, in millimeters.
  std::vector<Vec3> samples = sample_surface(ds.gt_vertices_frame0,
                                             ds.model.faces,
                                             cfg.n_scan_points, rng_scan);
  ds.scan.points.reserve(samples.size());
  for (const Vec3& p : samples) ds.scan.points.push_back(1000.0 * p);
  ds.scan.confidence.assign(ds.scan.points.size(), 1.0);
  ds.scan.keep.assign(ds.scan.points.size(), 1);
  for (const Vec3& lm : landmarks_3d(ds.gt_vertices_frame0, ds.model))
    ds.scan_landmarks.push_back(1000.0 * lm);

  // Perturbed initialization the fit starts from.
  ds.init_poses = gt.poses;
  for (Pose& pose : ds.init_poses) {
    pose.rotation = quat_multiply(small_rotation(rng_init, cfg.init_rot_deg),
                                  pose.rotation);
    pose.translation += cfg.init_trans_err * rng_init.normal3().normalized();
    pose.neck_rotation = quat_identity();
  }

  ds.gt_state = std::move(gt);
  return ds;
}

// ---------------------------------------------------------------------------
// On-disk layout:
//   meta.json, model.txt, prior.txt
//   frame_XXX.png, frame_XXX_mask.png, frame_XXX_landmarks.txt
//   gt/scan.ply, gt/scan_landmarks.txt, gt/mesh_frame0.obj, gt/state.ckpt
// ---------------------------------------------------------------------------

namespace synth_detail {

inline std::string frame_name(int f, const char* suffix) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "frame_%03d%s", f, suffix);
  return buf;
}

inline ImageBuf quantized(const ImageBuf& img) {
  ImageBuf q = img;
  for (double& v : q.data) {
    double c = std::min(1.0, std::max(0.0, v));
    v = std::round(c * 255.0) / 255.0;
  }
  return q;
}

}  // namespace synth_detail

inline void write_synth_dataset(const std::string& dir, const SynthDataset& ds,
                                const SynthConfig& cfg) {
  using namespace synth_detail;
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "gt");

  save_model((fs::path(dir) / "model.txt").string(), ds.model);
  save_prior((fs::path(dir) / "prior.txt").string(), ds.prior);

  for (int f = 0; f < static_cast<int>(ds.targets.size()); ++f) {
    const FrameTarget& t = ds.targets[static_cast<size_t>(f)];
    write_png((fs::path(dir) / frame_name(f, ".png")).string(), t.image);
    write_png((fs::path(dir) / frame_name(f, "_mask.png")).string(),
              t.external_mask);
    save_landmarks_2d(
        (fs::path(dir) / frame_name(f, "_landmarks.txt")).string(),
        t.landmarks);
  }

  save_ply((fs::path(dir) / "gt" / "scan.ply").string(), ds.scan,
           /*binary=*/true);
  save_landmarks_3d((fs::path(dir) / "gt" / "scan_landmarks.txt").string(),
                    ds.scan_landmarks);
  save_obj((fs::path(dir) / "gt" / "mesh_frame0.obj").string(),
           ds.gt_vertices_frame0, ds.model.faces);
  save_checkpoint((fs::path(dir) / "gt" / "state.ckpt").string(),
                  state_to_checkpoint(ds.gt_state));

  nlohmann::ordered_json meta;
  meta["format"] = "splatrig_dataset";
  meta["version"] = 1;
  meta["seed"] = cfg.seed;
  meta["resolution"] = cfg.resolution;
  meta["n_frames"] = static_cast<int>(ds.targets.size());
  meta["fov_y_deg"] = cfg.fov_y_deg;
  meta["camera_distance"] = cfg.camera_distance;
  meta["background"] = {ds.background.x(), ds.background.y(),
                        ds.background.z()};
  meta["model"] = "model.txt";
  meta["prior"] = "prior.txt";
  meta["scan"] = "gt/scan.ply";
  meta["scan_landmarks"] = "gt/scan_landmarks.txt";
  nlohmann::ordered_json init = nlohmann::ordered_json::array();
  for (const Pose& p : ds.init_poses) {
    nlohmann::ordered_json jp;
    jp["rotation"] = {p.rotation[0], p.rotation[1], p.rotation[2],
                      p.rotation[3]};
    jp["translation"] = {p.translation.x(), p.translation.y(),
                         p.translation.z()};
    jp["neck_rotation"] = {p.neck_rotation[0], p.neck_rotation[1],
                           p.neck_rotation[2], p.neck_rotation[3]};
    init.push_back(jp);
  }
  meta["init_poses"] = init;

  std::ofstream f(fs::path(dir) / "meta.json");
  if (!f) throw RunError("cannot write meta.json in " + dir);
  f << meta.dump(2) << "\n";
}

struct LoadedDataset {
  BlendshapeModel model;
  LightingPrior prior;
  Camera camera;
  Vec3 background = Vec3::Zero();
  std::vector<FrameTarget> targets;  // images as quantized by PNG
  std::vector<Pose> init_poses;
  std::string scan_path;
  std::string scan_landmarks_path;
};

inline LoadedDataset load_synth_dataset(const std::string& dir) {
  using namespace synth_detail;
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "meta.json");
  if (!mf) throw RunError("cannot open meta.json in " + dir);
  nlohmann::json meta = nlohmann::json::parse(mf);
  if (meta.value("format", "") != "splatrig_dataset")
    throw ValidationError("not a dataset directory: " + dir);

  LoadedDataset out;
  int res = meta.at("resolution").get<int>();
  int n_frames = meta.at("n_frames").get<int>();
  out.camera = make_front_camera(res, res, meta.at("fov_y_deg").get<double>(),
                                 meta.at("camera_distance").get<double>());
  auto bg = meta.at("background");
  out.background = Vec3(bg[0].get<double>(), bg[1].get<double>(),
                        bg[2].get<double>());
  out.model =
      load_model((fs::path(dir) / meta.at("model").get<std::string>()).string());
  out.prior =
      load_prior((fs::path(dir) / meta.at("prior").get<std::string>()).string());
  out.scan_path = (fs::path(dir) / meta.value("scan", "gt/scan.ply")).string();
  out.scan_landmarks_path =
      (fs::path(dir) / meta.value("scan_landmarks", "gt/scan_landmarks.txt"))
          .string();

  out.targets.resize(static_cast<size_t>(n_frames));
  for (int f = 0; f < n_frames; ++f) {
    FrameTarget& t = out.targets[static_cast<size_t>(f)];
    t.camera = out.camera;
    t.image = read_png((fs::path(dir) / frame_name(f, ".png")).string());
    if (t.image.width != res || t.image.height != res || t.image.channels != 3)
      throw ValidationError("frame image size does not match meta.json");
    fs::path mask = fs::path(dir) / frame_name(f, "_mask.png");
    if (fs::exists(mask)) {
      t.external_mask = read_png(mask.string());
      // Stored as 0/255 gray; restore the 0/1 convention.
      for (double& v : t.external_mask.data) v = v > 0.5 ? 1.0 : 0.0;
    }
    t.landmarks = load_landmarks_2d(
        (fs::path(dir) / frame_name(f, "_landmarks.txt")).string());
  }

  if (meta.contains("init_poses")) {
    for (const auto& jp : meta.at("init_poses")) {
      Pose p;
      auto r = jp.at("rotation");
      p.rotation = Vec4(r[0].get<double>(), r[1].get<double>(),
                        r[2].get<double>(), r[3].get<double>());
      auto tr = jp.at("translation");
      p.translation = Vec3(tr[0].get<double>(), tr[1].get<double>(),
                           tr[2].get<double>());
      auto nr = jp.at("neck_rotation");
      p.neck_rotation = Vec4(nr[0].get<double>(), nr[1].get<double>(),
                             nr[2].get<double>(), nr[3].get<double>());
      out.init_poses.push_back(p);
    }
  }
  return out;
}

}  // namespace splatrig
