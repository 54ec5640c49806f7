#pragma once

#include "splatrig/fit.hpp"
#include "splatrig/synth.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>

namespace splatrig {

// ---------------------------------------------------------------------------
// Run configuration: a JSON file provides defaults, command-line flags win.
// Unknown keys are rejected by name so typos cannot silently revert a field
// to its default. The fully resolved config is echoed into every output
// directory as config_echo.json for provenance.
// ---------------------------------------------------------------------------

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::set<std::string>& allowed,
                                const std::string& scope) {
  if (!j.is_object())
    throw ValidationError("config section '" + scope + "' must be an object");
  for (const auto& [key, value] : j.items())
    if (allowed.find(key) == allowed.end())
      throw ValidationError("unknown config key '" + scope + key + "'");
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

struct FitRunConfig {
  std::string dataset_dir;
  std::string output_dir;
  FitConfig fit;
  bool use_external_masks = false;
  std::set<std::string> freeze;  // of: splats, shape, expr, pose, lighting

  void validate() const {
    if (dataset_dir.empty()) throw ValidationError("fit needs a dataset dir");
    if (output_dir.empty()) throw ValidationError("fit needs an output dir");
    static const std::set<std::string> groups{"splats", "shape", "expr",
                                              "pose", "lighting"};
    for (const auto& g : freeze)
      if (groups.find(g) == groups.end())
        throw ValidationError("unknown freeze group '" + g + "'");
    fit.validate();
  }

  /// Freezing a group is implemented as lr = 0, which skips its Adam step.
  FitConfig effective_fit() const {
    FitConfig c = fit;
    if (freeze.count("splats")) c.lr_splats = 0.0;
    if (freeze.count("shape")) c.lr_shape = 0.0;
    if (freeze.count("expr")) c.lr_expr = 0.0;
    if (freeze.count("pose")) c.lr_pose = 0.0;
    if (freeze.count("lighting")) c.lr_lighting = 0.0;
    return c;
  }
};

inline void apply_fit_json(const nlohmann::json& j, FitRunConfig& c) {
  reject_unknown_keys(
      j,
      {"dataset", "output", "iterations", "seed", "threads", "lr", "densify",
       "weights", "scale_reg_mode", "detach_mesh_targets",
       "use_external_masks", "freeze"},
      "");
  if (j.contains("dataset")) c.dataset_dir = j["dataset"].get<std::string>();
  if (j.contains("output")) c.output_dir = j["output"].get<std::string>();
  if (j.contains("iterations")) c.fit.iterations = j["iterations"].get<int>();
  if (j.contains("seed")) c.fit.seed = j["seed"].get<uint64_t>();
  if (j.contains("threads")) c.fit.render.n_threads = j["threads"].get<int>();
  if (j.contains("lr")) {
    const auto& lr = j["lr"];
    reject_unknown_keys(lr, {"splats", "shape", "expr", "pose", "lighting"},
                        "lr.");
    if (lr.contains("splats")) c.fit.lr_splats = lr["splats"].get<double>();
    if (lr.contains("shape")) c.fit.lr_shape = lr["shape"].get<double>();
    if (lr.contains("expr")) c.fit.lr_expr = lr["expr"].get<double>();
    if (lr.contains("pose")) c.fit.lr_pose = lr["pose"].get<double>();
    if (lr.contains("lighting"))
      c.fit.lr_lighting = lr["lighting"].get<double>();
  }
  if (j.contains("densify")) {
    const auto& d = j["densify"];
    reject_unknown_keys(
        d, {"interval", "history", "n_prune", "n_densify", "noise_scale"},
        "densify.");
    if (d.contains("interval")) c.fit.t_densify = d["interval"].get<int>();
    if (d.contains("history")) c.fit.t_history = d["history"].get<int>();
    if (d.contains("n_prune")) c.fit.n_prune = d["n_prune"].get<int>();
    if (d.contains("n_densify")) c.fit.n_densify = d["n_densify"].get<int>();
    if (d.contains("noise_scale"))
      c.fit.noise_scale = d["noise_scale"].get<double>();
  }
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    reject_unknown_keys(w,
                        {"l1", "landmark", "normals", "depth", "offset",
                         "scale", "opacity", "expr", "shape", "feature"},
                        "weights.");
    LossWeights& lw = c.fit.weights;
    if (w.contains("l1")) lw.w_l1 = w["l1"].get<double>();
    if (w.contains("landmark")) lw.w_lmk = w["landmark"].get<double>();
    if (w.contains("normals")) lw.w_normals = w["normals"].get<double>();
    if (w.contains("depth")) lw.w_depth = w["depth"].get<double>();
    if (w.contains("offset")) lw.w_offset = w["offset"].get<double>();
    if (w.contains("scale")) lw.w_scale = w["scale"].get<double>();
    if (w.contains("opacity")) lw.w_opacity = w["opacity"].get<double>();
    if (w.contains("expr")) lw.w_expr = w["expr"].get<double>();
    if (w.contains("shape")) lw.w_shape = w["shape"].get<double>();
    if (w.contains("feature")) lw.w_feature = w["feature"].get<double>();
  }
  if (j.contains("scale_reg_mode")) {
    std::string m = j["scale_reg_mode"].get<std::string>();
    if (m == "deviation") c.fit.scale_reg_mode = ScaleRegMode::kDeviation;
    else if (m == "raw") c.fit.scale_reg_mode = ScaleRegMode::kRaw;
    else throw ValidationError("scale_reg_mode must be 'deviation' or 'raw'");
  }
  if (j.contains("detach_mesh_targets"))
    c.fit.detach_mesh_targets = j["detach_mesh_targets"].get<bool>();
  if (j.contains("use_external_masks"))
    c.use_external_masks = j["use_external_masks"].get<bool>();
  if (j.contains("freeze")) {
    c.freeze.clear();
    for (const auto& g : j["freeze"]) c.freeze.insert(g.get<std::string>());
  }
}

inline nlohmann::ordered_json fit_config_to_json(const FitRunConfig& c) {
  nlohmann::ordered_json j;
  j["dataset"] = c.dataset_dir;
  j["output"] = c.output_dir;
  j["iterations"] = c.fit.iterations;
  j["seed"] = c.fit.seed;
  j["threads"] = c.fit.render.n_threads;
  j["lr"] = {{"splats", c.fit.lr_splats},
             {"shape", c.fit.lr_shape},
             {"expr", c.fit.lr_expr},
             {"pose", c.fit.lr_pose},
             {"lighting", c.fit.lr_lighting}};
  j["densify"] = {{"interval", c.fit.t_densify},
                  {"history", c.fit.t_history},
                  {"n_prune", c.fit.n_prune},
                  {"n_densify", c.fit.n_densify},
                  {"noise_scale", c.fit.noise_scale}};
  const LossWeights& w = c.fit.weights;
  j["weights"] = {{"l1", w.w_l1},         {"landmark", w.w_lmk},
                  {"normals", w.w_normals}, {"depth", w.w_depth},
                  {"offset", w.w_offset},   {"scale", w.w_scale},
                  {"opacity", w.w_opacity}, {"expr", w.w_expr},
                  {"shape", w.w_shape},     {"feature", w.w_feature}};
  j["scale_reg_mode"] =
      c.fit.scale_reg_mode == ScaleRegMode::kDeviation ? "deviation" : "raw";
  j["detach_mesh_targets"] = c.fit.detach_mesh_targets;
  j["use_external_masks"] = c.use_external_masks;
  j["freeze"] = c.freeze;
  return j;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthRunConfig {
  std::string output_dir;
  SynthConfig synth;

  void validate() const {
    if (output_dir.empty()) throw ValidationError("synth needs an output dir");
    synth.validate();
  }
};

inline void apply_synth_json(const nlohmann::json& j, SynthRunConfig& c) {
  reject_unknown_keys(j,
                      {"output", "resolution", "n_frames", "fov_y_deg",
                       "camera_distance", "seed", "n_scan_points",
                       "shape_magnitude", "expr_magnitude", "pose_yaw_deg",
                       "lighting_magnitude", "albedo_variation",
                       "init_rot_deg", "init_trans_err"},
                      "");
  if (j.contains("output")) c.output_dir = j["output"].get<std::string>();
  SynthConfig& s = c.synth;
  if (j.contains("resolution")) s.resolution = j["resolution"].get<int>();
  if (j.contains("n_frames")) s.n_frames = j["n_frames"].get<int>();
  if (j.contains("fov_y_deg")) s.fov_y_deg = j["fov_y_deg"].get<double>();
  if (j.contains("camera_distance"))
    s.camera_distance = j["camera_distance"].get<double>();
  if (j.contains("seed")) s.seed = j["seed"].get<uint64_t>();
  if (j.contains("n_scan_points"))
    s.n_scan_points = j["n_scan_points"].get<int>();
  if (j.contains("shape_magnitude"))
    s.shape_magnitude = j["shape_magnitude"].get<double>();
  if (j.contains("expr_magnitude"))
    s.expr_magnitude = j["expr_magnitude"].get<double>();
  if (j.contains("pose_yaw_deg"))
    s.pose_yaw_deg = j["pose_yaw_deg"].get<double>();
  if (j.contains("lighting_magnitude"))
    s.lighting_magnitude = j["lighting_magnitude"].get<double>();
  if (j.contains("albedo_variation"))
    s.albedo_variation = j["albedo_variation"].get<double>();
  if (j.contains("init_rot_deg"))
    s.init_rot_deg = j["init_rot_deg"].get<double>();
  if (j.contains("init_trans_err"))
    s.init_trans_err = j["init_trans_err"].get<double>();
}

inline nlohmann::ordered_json synth_config_to_json(const SynthRunConfig& c) {
  nlohmann::ordered_json j;
  j["output"] = c.output_dir;
  const SynthConfig& s = c.synth;
  j["resolution"] = s.resolution;
  j["n_frames"] = s.n_frames;
  j["fov_y_deg"] = s.fov_y_deg;
  j["camera_distance"] = s.camera_distance;
  j["seed"] = s.seed;
  j["n_scan_points"] = s.n_scan_points;
  j["shape_magnitude"] = s.shape_magnitude;
  j["expr_magnitude"] = s.expr_magnitude;
  j["pose_yaw_deg"] = s.pose_yaw_deg;
  j["lighting_magnitude"] = s.lighting_magnitude;
  j["albedo_variation"] = s.albedo_variation;
  j["init_rot_deg"] = s.init_rot_deg;
  j["init_trans_err"] = s.init_trans_err;
  return j;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalRunConfig {
  std::string mesh_path;            // OBJ, meters
  std::string scan_path;            // PLY, scan units (mm for synth datasets)
  std::string mesh_landmarks_path;  // 3D text table, meters
  std::string scan_landmarks_path;  // 3D text table, scan units
  std::string output_dir;
  bool metrical = false;
  int icp_iterations = 10;
  int threads = 0;  // 0 = all cores

  void validate() const {
    if (mesh_path.empty() || scan_path.empty() ||
        mesh_landmarks_path.empty() || scan_landmarks_path.empty())
      throw ValidationError("eval needs mesh, scan, and both landmark files");
    if (icp_iterations < 0)
      throw ValidationError("icp_iterations must be >= 0");
  }
};

inline void apply_eval_json(const nlohmann::json& j, EvalRunConfig& c) {
  reject_unknown_keys(j,
                      {"mesh", "scan", "mesh_landmarks", "scan_landmarks",
                       "output", "metrical", "icp_iterations", "threads"},
                      "");
  if (j.contains("mesh")) c.mesh_path = j["mesh"].get<std::string>();
  if (j.contains("scan")) c.scan_path = j["scan"].get<std::string>();
  if (j.contains("mesh_landmarks"))
    c.mesh_landmarks_path = j["mesh_landmarks"].get<std::string>();
  if (j.contains("scan_landmarks"))
    c.scan_landmarks_path = j["scan_landmarks"].get<std::string>();
  if (j.contains("output")) c.output_dir = j["output"].get<std::string>();
  if (j.contains("metrical")) c.metrical = j["metrical"].get<bool>();
  if (j.contains("icp_iterations"))
    c.icp_iterations = j["icp_iterations"].get<int>();
  if (j.contains("threads")) c.threads = j["threads"].get<int>();
}

inline nlohmann::ordered_json eval_config_to_json(const EvalRunConfig& c) {
  nlohmann::ordered_json j;
  j["mesh"] = c.mesh_path;
  j["scan"] = c.scan_path;
  j["mesh_landmarks"] = c.mesh_landmarks_path;
  j["scan_landmarks"] = c.scan_landmarks_path;
  j["output"] = c.output_dir;
  j["metrical"] = c.metrical;
  j["icp_iterations"] = c.icp_iterations;
  j["threads"] = c.threads;
  return j;
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

struct RenderRunConfig {
  std::string checkpoint_path;
  std::string model_path;
  std::string prior_path;
  std::string output_dir;
  int resolution = 512;
  double fov_y_deg = 14.3;
  double camera_distance = 1.0;
  Vec3 background = Vec3::Zero();
  int frame = 0;                 // which stored (psi, pose) to use
  double yaw_offset_deg = 0.0;   // extra global rotation
  std::string psi_override;     // optional text file with expression values
  int threads = 0;  // 0 = all cores

  void validate() const {
    if (checkpoint_path.empty() || model_path.empty() || prior_path.empty())
      throw ValidationError("render needs checkpoint, model, and prior paths");
    if (output_dir.empty()) throw ValidationError("render needs an output dir");
    if (resolution < 16) throw ValidationError("resolution must be >= 16");
    if (frame < 0) throw ValidationError("frame must be >= 0");
  }
};

inline void apply_render_json(const nlohmann::json& j, RenderRunConfig& c) {
  reject_unknown_keys(j,
                      {"checkpoint", "model", "prior", "output", "resolution",
                       "fov_y_deg", "camera_distance", "background", "frame",
                       "yaw_offset_deg", "psi_override", "threads"},
                      "");
  if (j.contains("checkpoint"))
    c.checkpoint_path = j["checkpoint"].get<std::string>();
  if (j.contains("model")) c.model_path = j["model"].get<std::string>();
  if (j.contains("prior")) c.prior_path = j["prior"].get<std::string>();
  if (j.contains("output")) c.output_dir = j["output"].get<std::string>();
  if (j.contains("resolution")) c.resolution = j["resolution"].get<int>();
  if (j.contains("fov_y_deg")) c.fov_y_deg = j["fov_y_deg"].get<double>();
  if (j.contains("camera_distance"))
    c.camera_distance = j["camera_distance"].get<double>();
  if (j.contains("background")) {
    const auto& b = j["background"];
    if (!b.is_array() || b.size() != 3)
      throw ValidationError("background must be an [r, g, b] array");
    c.background = Vec3(b[0].get<double>(), b[1].get<double>(),
                        b[2].get<double>());
  }
  if (j.contains("frame")) c.frame = j["frame"].get<int>();
  if (j.contains("yaw_offset_deg"))
    c.yaw_offset_deg = j["yaw_offset_deg"].get<double>();
  if (j.contains("psi_override"))
    c.psi_override = j["psi_override"].get<std::string>();
  if (j.contains("threads")) c.threads = j["threads"].get<int>();
}

inline nlohmann::ordered_json render_config_to_json(const RenderRunConfig& c) {
  nlohmann::ordered_json j;
  j["checkpoint"] = c.checkpoint_path;
  j["model"] = c.model_path;
  j["prior"] = c.prior_path;
  j["output"] = c.output_dir;
  j["resolution"] = c.resolution;
  j["fov_y_deg"] = c.fov_y_deg;
  j["camera_distance"] = c.camera_distance;
  j["background"] = {c.background.x(), c.background.y(), c.background.z()};
  j["frame"] = c.frame;
  j["yaw_offset_deg"] = c.yaw_offset_deg;
  j["psi_override"] = c.psi_override;
  j["threads"] = c.threads;
  return j;
}

// ---------------------------------------------------------------------------

inline nlohmann::json load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open config file: " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("config parse error in " + path + ": " + e.what());
  }
}

inline void echo_config(const std::string& output_dir,
                        const nlohmann::ordered_json& resolved) {
  namespace fs = std::filesystem;
  fs::create_directories(output_dir);
  std::ofstream f(fs::path(output_dir) / "config_echo.json");
  if (!f) throw RunError("cannot write config echo in " + output_dir);
  f << resolved.dump(2) << "\n";
}

}  // namespace splatrig
