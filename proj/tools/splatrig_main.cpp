// Command-line shell: synth, fit, render, eval. Exit codes: 0 success,
// 1 validation failure, 2 runtime failure, 3 numerical abort.

#include "splatrig/config.hpp"
#include "splatrig/eval.hpp"
#include "splatrig/fit.hpp"
#include "splatrig/io_checkpoint.hpp"
#include "splatrig/io_image.hpp"
#include "splatrig/io_model.hpp"
#include "splatrig/io_scan.hpp"
#include "splatrig/synth.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace splatrig;

namespace {

// ---------------------------------------------------------------------------
// Render artifact export shared by fit and render so a checkpoint re-render
// reproduces the fit's final images byte-exactly.
// ---------------------------------------------------------------------------

ImageBuf depth_to_image(const ImageBuf& depth) {
  double max_d = 0.0;
  for (double v : depth.data) max_d = std::max(max_d, v);
  ImageBuf out = depth;
  if (max_d > 0.0)
    for (double& v : out.data) v = std::min(1.0, std::max(0.0, v / max_d));
  return out;
}

ImageBuf normal_to_image(const ImageBuf& normal) {
  ImageBuf out = normal;
  for (double& v : out.data) v = std::min(1.0, std::max(0.0, 0.5 * (v + 1.0)));
  return out;
}

ImageBuf clamped01(const ImageBuf& img) {
  ImageBuf out = img;
  for (double& v : out.data) v = std::min(1.0, std::max(0.0, v));
  return out;
}

void write_render_artifacts(const fs::path& dir, const std::string& prefix,
                            const RenderBuffers& buf) {
  write_png((dir / (prefix + "_color.png")).string(), clamped01(buf.color));
  write_png((dir / (prefix + "_depth.png")).string(),
            depth_to_image(buf.depth));
  write_png((dir / (prefix + "_normal.png")).string(),
            normal_to_image(buf.normal));
  write_png((dir / (prefix + "_alpha.png")).string(), clamped01(buf.alpha));
  write_raw_dump((dir / (prefix + "_color.raw")).string(), buf.color);
  write_raw_dump((dir / (prefix + "_depth.raw")).string(), buf.depth);
  write_raw_dump((dir / (prefix + "_normal.raw")).string(), buf.normal);
  write_raw_dump((dir / (prefix + "_alpha.raw")).string(), buf.alpha);
}

std::string frame_prefix(int f) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "final_%03d", f);
  return buf;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const SynthRunConfig& cfg) {
  cfg.validate();
  echo_config(cfg.output_dir, synth_config_to_json(cfg));
  SynthDataset ds = make_synth_dataset(cfg.synth);
  write_synth_dataset(cfg.output_dir, ds, cfg.synth);
  std::cout << "synth: wrote " << ds.targets.size() << " frames to "
            << cfg.output_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

int cmd_fit(const FitRunConfig& cfg) {
  cfg.validate();
  echo_config(cfg.output_dir, fit_config_to_json(cfg));
  LoadedDataset ds = load_synth_dataset(cfg.dataset_dir);
  FitConfig fit_cfg = cfg.effective_fit();

  if (!cfg.use_external_masks)
    for (auto& t : ds.targets) t.external_mask = ImageBuf();

  FitState st = init_fit_state(ds.model, static_cast<int>(ds.targets.size()),
                               ds.prior.dim(), fit_cfg);
  if (!ds.init_poses.empty()) {
    if (ds.init_poses.size() != st.poses.size())
      throw ValidationError("init pose count does not match frame count");
    st.poses = ds.init_poses;
  }

  fs::path out(cfg.output_dir);
  std::ofstream log(out / "loss_log.jsonl");
  if (!log) throw RunError("cannot write loss log in " + cfg.output_dir);
  auto last = std::chrono::steady_clock::now();
  auto on_report = [&](const LossReport& r) {
    auto now = std::chrono::steady_clock::now();
    double wall_ms =
        std::chrono::duration<double, std::milli>(now - last).count();
    last = now;
    nlohmann::ordered_json j;
    j["iteration"] = r.iteration;
    j["total"] = r.total;
    j["terms"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.terms) j["terms"][k] = v;
    j["wall_ms"] = wall_ms;  // excluded from determinism comparisons
    log << j.dump() << "\n";
  };

  FitResult res = fit(ds.model, ds.prior, ds.targets, ds.background,
                      std::move(st), fit_cfg, on_report);
  log.close();

  // Densify bookkeeping record.
  nlohmann::ordered_json densify = nlohmann::ordered_json::array();
  for (const DensifyEvent& ev : res.densify_events) {
    nlohmann::ordered_json j;
    j["iteration"] = ev.iteration;
    j["count_before"] = ev.count_before;
    j["count_after"] = ev.count_after;
    j["n_pruned"] = ev.outcome.n_pruned;
    j["n_cloned"] = ev.outcome.n_cloned;
    j["prune_deficit"] = ev.outcome.prune_deficit;
    j["clone_deficit"] = ev.outcome.clone_deficit;
    j["min_face_count"] =
        ev.face_counts_after.empty()
            ? 0
            : *std::min_element(ev.face_counts_after.begin(),
                                ev.face_counts_after.end());
    j["max_face_count"] =
        ev.face_counts_after.empty()
            ? 0
            : *std::max_element(ev.face_counts_after.begin(),
                                ev.face_counts_after.end());
    densify.push_back(j);
  }
  {
    std::ofstream f(out / "densify_events.json");
    f << densify.dump(2) << "\n";
  }

  save_checkpoint((out / "final.ckpt").string(),
                  state_to_checkpoint(res.state));

  // Final artifacts are rendered from the reloaded checkpoint so that a later
  // `render` of the same checkpoint reproduces them byte-exactly.
  Checkpoint ck = load_checkpoint((out / "final.ckpt").string());
  FitState final_state = checkpoint_to_state(ck, ds.model, fit_cfg);
  for (int f = 0; f < static_cast<int>(ds.targets.size()); ++f) {
    FrameForward fw = forward_frame(ds.model, ds.prior, final_state, f,
                                    ds.targets[static_cast<size_t>(f)].camera,
                                    fit_cfg.render, ds.background);
    write_render_artifacts(out, frame_prefix(f), fw.buffers);
    save_obj((out / (frame_prefix(f) + "_mesh.obj")).string(), fw.vertices,
             ds.model.faces);
    save_landmarks_3d((out / (frame_prefix(f) + "_landmarks3d.txt")).string(),
                      landmarks_3d(fw.vertices, ds.model));
  }

  // Final objective on the reloaded state, for the summary record.
  LossReport final_report = evaluate_objective(
      ds.model, ds.prior, ds.targets, ds.background, final_state, fit_cfg);
  nlohmann::ordered_json summary;
  summary["iterations_run"] = fit_cfg.iterations;
  summary["n_prototypes"] = final_state.protos.size();
  summary["final_total"] = final_report.total;
  summary["final_terms"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : final_report.terms) summary["final_terms"][k] = v;
  {
    std::ofstream f(out / "summary.json");
    f << summary.dump(2) << "\n";
  }
  std::cout << "fit: " << fit_cfg.iterations << " iterations, final total "
            << final_report.total << ", artifacts in " << cfg.output_dir
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// render
// ---------------------------------------------------------------------------

int cmd_render(const RenderRunConfig& cfg) {
  cfg.validate();
  echo_config(cfg.output_dir, render_config_to_json(cfg));
  BlendshapeModel model = load_model(cfg.model_path);
  LightingPrior prior = load_prior(cfg.prior_path);
  Checkpoint ck = load_checkpoint(cfg.checkpoint_path);

  FitConfig fit_cfg;
  fit_cfg.render.n_threads = cfg.threads;
  FitState st = checkpoint_to_state(ck, model, fit_cfg);
  if (cfg.frame >= st.n_frames())
    throw ValidationError("frame index exceeds checkpoint frame count");

  if (!cfg.psi_override.empty()) {
    std::ifstream f(cfg.psi_override);
    if (!f) throw ValidationError("cannot open psi override file");
    VecX psi = VecX::Zero(model.k_expr());
    for (Eigen::Index i = 0; i < psi.size(); ++i)
      if (!(f >> psi[i]))
        throw ValidationError("psi override needs " +
                              std::to_string(model.k_expr()) + " values");
    st.psi[static_cast<size_t>(cfg.frame)] = psi;
  }
  if (cfg.yaw_offset_deg != 0.0) {
    Pose& p = st.poses[static_cast<size_t>(cfg.frame)];
    p.rotation = quat_multiply(
        quat_from_axis_angle(Vec3(0, 1, 0), deg_to_rad(cfg.yaw_offset_deg)),
        p.rotation);
  }

  Camera cam = make_front_camera(cfg.resolution, cfg.resolution, cfg.fov_y_deg,
                                 cfg.camera_distance);
  FrameForward fw = forward_frame(model, prior, st, cfg.frame, cam,
                                  fit_cfg.render, cfg.background);
  write_render_artifacts(fs::path(cfg.output_dir), frame_prefix(cfg.frame),
                         fw.buffers);
  std::cout << "render: frame " << cfg.frame << " to " << cfg.output_dir
            << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const EvalRunConfig& cfg) {
  cfg.validate();
  std::vector<Vec3> mesh_vertices;
  std::vector<Eigen::Vector3i> mesh_faces;
  load_obj(cfg.mesh_path, mesh_vertices, mesh_faces);
  std::vector<Vec3> mesh_landmarks = load_landmarks_3d(cfg.mesh_landmarks_path);
  ScanCloud scan = load_ply(cfg.scan_path);
  scan.validate();
  scan.filter_kept();
  std::vector<Vec3> scan_landmarks = load_landmarks_3d(cfg.scan_landmarks_path);

  EvalMetrics m =
      evaluate_cloud(scan.points, scan_landmarks, mesh_vertices, mesh_faces,
                     mesh_landmarks, /*with_scale=*/!cfg.metrical,
                     cfg.icp_iterations, cfg.threads);

  nlohmann::ordered_json j;
  j["mean_mm"] = m.mean_mm;
  j["median_mm"] = m.median_mm;
  j["std_mm"] = m.std_mm;
  j["count"] = m.count;
  j["align_scale"] = m.align_scale;
  j["align_residual_rms_mm"] = m.align_residual_rms;
  j["metrical"] = cfg.metrical;
  std::cout << j.dump(2) << "\n";
  if (!cfg.output_dir.empty()) {
    echo_config(cfg.output_dir, eval_config_to_json(cfg));
    std::ofstream f(fs::path(cfg.output_dir) / "metrics.json");
    if (!f) throw RunError("cannot write metrics in " + cfg.output_dir);
    f << j.dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mesh-rigged 2D Gaussian splat fitting"};
  app.require_subcommand(1);

  // --- synth ---
  auto* s = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string s_config, s_output;
  int s_res = 0, s_frames = 0, s_scan_points = 0;
  uint64_t s_seed = 0;
  s->add_option("--config", s_config, "JSON config file");
  s->add_option("--output", s_output, "output directory");
  s->add_option("--resolution", s_res, "image size (square)");
  s->add_option("--frames", s_frames, "number of frames");
  s->add_option("--seed", s_seed, "random seed");
  s->add_option("--scan-points", s_scan_points, "surface scan sample count");

  // --- fit ---
  auto* f = app.add_subcommand("fit", "fit a rig to a dataset");
  std::string f_config, f_dataset, f_output;
  int f_iters = 0, f_threads = 0;
  uint64_t f_seed = 0;
  std::vector<std::string> f_freeze;
  bool f_ext_masks = false;
  f->add_option("--config", f_config, "JSON config file");
  f->add_option("--dataset", f_dataset, "dataset directory");
  f->add_option("--output", f_output, "output directory");
  f->add_option("--iterations", f_iters, "optimization iterations");
  f->add_option("--seed", f_seed, "random seed");
  f->add_option("--threads", f_threads, "worker threads (0 = all cores)");
  f->add_option("--freeze", f_freeze,
                "parameter groups to freeze (splats shape expr pose lighting)");
  f->add_flag("--use-external-masks", f_ext_masks,
              "use dataset mask images instead of the live mesh mask");

  // --- render ---
  auto* r = app.add_subcommand("render", "render a fitted checkpoint");
  std::string r_config, r_ckpt, r_model, r_prior, r_output, r_psi;
  int r_res = 0, r_frame = -1, r_threads = 0;
  double r_fov = 0.0, r_dist = 0.0, r_yaw = 0.0;
  std::vector<double> r_bg;
  r->add_option("--config", r_config, "JSON config file");
  r->add_option("--checkpoint", r_ckpt, "checkpoint file");
  r->add_option("--model", r_model, "blendshape model file");
  r->add_option("--prior", r_prior, "lighting prior file");
  r->add_option("--output", r_output, "output directory");
  r->add_option("--resolution", r_res, "image size (square)");
  r->add_option("--fov", r_fov, "vertical field of view, degrees");
  r->add_option("--distance", r_dist, "camera distance, meters");
  r->add_option("--background", r_bg, "background color r g b")
      ->expected(3);
  r->add_option("--frame", r_frame, "stored frame (psi, pose) to render");
  r->add_option("--yaw-deg", r_yaw, "extra global yaw applied to the pose");
  r->add_option("--psi-override", r_psi, "text file with expression values");
  r->add_option("--threads", r_threads, "worker threads");

  // --- eval ---
  auto* e = app.add_subcommand("eval", "geometric evaluation vs a scan");
  std::string e_config, e_mesh, e_scan, e_mlmk, e_slmk, e_output;
  int e_icp = -1, e_threads = 0;
  bool e_metrical = false;
  e->add_option("--config", e_config, "JSON config file");
  e->add_option("--mesh", e_mesh, "fitted mesh OBJ (meters)");
  e->add_option("--scan", e_scan, "reference scan PLY (millimeters)");
  e->add_option("--mesh-landmarks", e_mlmk, "mesh landmark file (meters)");
  e->add_option("--scan-landmarks", e_slmk, "scan landmark file (scan units)");
  e->add_option("--output", e_output, "output directory for metrics.json");
  e->add_flag("--metrical", e_metrical, "fix alignment scale to 1");
  e->add_option("--icp", e_icp, "ICP refinement iterations");
  e->add_option("--threads", e_threads, "worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (s->parsed()) {
      SynthRunConfig cfg;
      if (!s_config.empty()) apply_synth_json(load_config_file(s_config), cfg);
      if (s->count("--output")) cfg.output_dir = s_output;
      if (s->count("--resolution")) cfg.synth.resolution = s_res;
      if (s->count("--frames")) cfg.synth.n_frames = s_frames;
      if (s->count("--seed")) cfg.synth.seed = s_seed;
      if (s->count("--scan-points")) cfg.synth.n_scan_points = s_scan_points;
      return cmd_synth(cfg);
    }
    if (f->parsed()) {
      FitRunConfig cfg;
      cfg.fit.render.n_threads = 0;  // CLI defaults to all cores
      if (!f_config.empty()) apply_fit_json(load_config_file(f_config), cfg);
      if (f->count("--dataset")) cfg.dataset_dir = f_dataset;
      if (f->count("--output")) cfg.output_dir = f_output;
      if (f->count("--iterations")) cfg.fit.iterations = f_iters;
      if (f->count("--seed")) cfg.fit.seed = f_seed;
      if (f->count("--threads")) cfg.fit.render.n_threads = f_threads;
      if (f->count("--freeze"))
        cfg.freeze = std::set<std::string>(f_freeze.begin(), f_freeze.end());
      if (f->count("--use-external-masks")) cfg.use_external_masks = true;
      return cmd_fit(cfg);
    }
    if (r->parsed()) {
      RenderRunConfig cfg;
      if (!r_config.empty())
        apply_render_json(load_config_file(r_config), cfg);
      if (r->count("--checkpoint")) cfg.checkpoint_path = r_ckpt;
      if (r->count("--model")) cfg.model_path = r_model;
      if (r->count("--prior")) cfg.prior_path = r_prior;
      if (r->count("--output")) cfg.output_dir = r_output;
      if (r->count("--resolution")) cfg.resolution = r_res;
      if (r->count("--fov")) cfg.fov_y_deg = r_fov;
      if (r->count("--distance")) cfg.camera_distance = r_dist;
      if (r->count("--background"))
        cfg.background = Vec3(r_bg[0], r_bg[1], r_bg[2]);
      if (r->count("--frame")) cfg.frame = r_frame;
      if (r->count("--yaw-deg")) cfg.yaw_offset_deg = r_yaw;
      if (r->count("--psi-override")) cfg.psi_override = r_psi;
      if (r->count("--threads")) cfg.threads = r_threads;
      return cmd_render(cfg);
    }
    if (e->parsed()) {
      EvalRunConfig cfg;
      if (!e_config.empty()) apply_eval_json(load_config_file(e_config), cfg);
      if (e->count("--mesh")) cfg.mesh_path = e_mesh;
      if (e->count("--scan")) cfg.scan_path = e_scan;
      if (e->count("--mesh-landmarks")) cfg.mesh_landmarks_path = e_mlmk;
      if (e->count("--scan-landmarks")) cfg.scan_landmarks_path = e_slmk;
      if (e->count("--output")) cfg.output_dir = e_output;
      if (e->count("--metrical")) cfg.metrical = true;
      if (e->count("--icp")) cfg.icp_iterations = e_icp;
      if (e->count("--threads")) cfg.threads = e_threads;
      return cmd_eval(cfg);
    }
  } catch (const ValidationError& err) {
    std::cerr << "validation error: " << err.what() << "\n";
    return 1;
  } catch (const NumericalError& err) {
    std::cerr << "numerical error: " << err.what() << "\n";
    return 3;
  } catch (const RunError& err) {
    std::cerr << "runtime error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "runtime error: " << err.what() << "\n";
    return 2;
  }
  return 0;
}
