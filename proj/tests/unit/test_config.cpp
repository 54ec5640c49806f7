#include <catch_amalgamated.hpp>

#include <splatrig/config.hpp>

#include <filesystem>
#include <fstream>

using namespace splatrig;
using nlohmann::json;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p);
  REQUIRE(f.good());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

}  // namespace

TEST_CASE("unknown config keys are rejected by name") {
  FitRunConfig c;
  json top = {{"dataset", "d"}, {"output", "o"}, {"iteratons", 5}};
  REQUIRE_THROWS_WITH(apply_fit_json(top, c),
                      Catch::Matchers::ContainsSubstring("iteratons"));

  json nested = {{"lr", {{"splats", 0.1}, {"shapes", 0.1}}}};
  REQUIRE_THROWS_WITH(apply_fit_json(nested, c),
                      Catch::Matchers::ContainsSubstring("lr.shapes"));

  json weights = {{"weights", {{"l2", 1.0}}}};
  REQUIRE_THROWS_WITH(apply_fit_json(weights, c),
                      Catch::Matchers::ContainsSubstring("weights.l2"));

  json densify = {{"densify", {{"intervall", 10}}}};
  REQUIRE_THROWS_WITH(apply_fit_json(densify, c),
                      Catch::Matchers::ContainsSubstring("densify.intervall"));

  SynthRunConfig sc;
  REQUIRE_THROWS_WITH(apply_synth_json(json{{"resolutions", 64}}, sc),
                      Catch::Matchers::ContainsSubstring("resolutions"));
  EvalRunConfig ec;
  REQUIRE_THROWS_WITH(apply_eval_json(json{{"meshes", "x"}}, ec),
                      Catch::Matchers::ContainsSubstring("meshes"));
  RenderRunConfig rc;
  REQUIRE_THROWS_WITH(apply_render_json(json{{"checkpoints", "x"}}, rc),
                      Catch::Matchers::ContainsSubstring("checkpoints"));
}

TEST_CASE("absent keys keep defaults, present keys override") {
  FitRunConfig c;
  FitConfig defaults;
  json j = {{"dataset", "data"},
            {"output", "out"},
            {"iterations", 123},
            {"lr", {{"pose", 0.5}}},
            {"weights", {{"depth", 2.5}}}};
  apply_fit_json(j, c);
  REQUIRE(c.dataset_dir == "data");
  REQUIRE(c.fit.iterations == 123);
  REQUIRE(c.fit.lr_pose == 0.5);
  REQUIRE(c.fit.lr_splats == defaults.lr_splats);
  REQUIRE(c.fit.weights.w_depth == 2.5);
  REQUIRE(c.fit.weights.w_l1 == defaults.weights.w_l1);
  REQUIRE(c.fit.t_densify == defaults.t_densify);
}

TEST_CASE("fit config json roundtrip is lossless") {
  FitRunConfig c;
  c.dataset_dir = "ds";
  c.output_dir = "out";
  c.fit.iterations = 77;
  c.fit.seed = 42;
  c.fit.render.n_threads = 3;
  c.fit.lr_splats = 0.011;
  c.fit.lr_lighting = 0.07;
  c.fit.t_densify = 55;
  c.fit.n_prune = 6;
  c.fit.noise_scale = 0.125;
  c.fit.weights.w_lmk = 1.5;
  c.fit.weights.w_feature = 0.25;
  c.fit.scale_reg_mode = ScaleRegMode::kRaw;
  c.use_external_masks = true;
  c.freeze = {"pose", "lighting"};

  nlohmann::ordered_json j = fit_config_to_json(c);
  FitRunConfig back;
  apply_fit_json(json::parse(j.dump()), back);
  REQUIRE(fit_config_to_json(back).dump() == j.dump());
  REQUIRE(back.fit.scale_reg_mode == ScaleRegMode::kRaw);
  REQUIRE(back.freeze == c.freeze);

  FitConfig eff = back.effective_fit();
  REQUIRE(eff.lr_pose == 0.0);
  REQUIRE(eff.lr_lighting == 0.0);
  REQUIRE(eff.lr_splats == 0.011);
}

TEST_CASE("scale reg mode parsing accepts only the two modes") {
  FitRunConfig c;
  apply_fit_json(json{{"scale_reg_mode", "raw"}}, c);
  REQUIRE(c.fit.scale_reg_mode == ScaleRegMode::kRaw);
  apply_fit_json(json{{"scale_reg_mode", "deviation"}}, c);
  REQUIRE(c.fit.scale_reg_mode == ScaleRegMode::kDeviation);
  REQUIRE_THROWS_AS(apply_fit_json(json{{"scale_reg_mode", "relative"}}, c),
                    ValidationError);
}

TEST_CASE("run config validation") {
  FitRunConfig c;
  REQUIRE_THROWS_AS(c.validate(), ValidationError);  // missing dirs
  c.dataset_dir = "d";
  c.output_dir = "o";
  c.validate();
  c.freeze = {"splatz"};
  REQUIRE_THROWS_WITH(c.validate(),
                      Catch::Matchers::ContainsSubstring("splatz"));

  EvalRunConfig ec;
  REQUIRE_THROWS_AS(ec.validate(), ValidationError);
  ec.mesh_path = "m.obj";
  ec.scan_path = "s.ply";
  ec.mesh_landmarks_path = "ml.txt";
  ec.scan_landmarks_path = "sl.txt";
  ec.validate();
  ec.icp_iterations = -1;
  REQUIRE_THROWS_AS(ec.validate(), ValidationError);

  RenderRunConfig rc;
  REQUIRE_THROWS_AS(rc.validate(), ValidationError);
  rc.checkpoint_path = "c.ckpt";
  rc.model_path = "m.txt";
  rc.prior_path = "p.txt";
  rc.output_dir = "o";
  rc.validate();
  rc.resolution = 8;
  REQUIRE_THROWS_AS(rc.validate(), ValidationError);
}

TEST_CASE("synth and eval and render configs roundtrip") {
  SynthRunConfig sc;
  sc.output_dir = "synth_out";
  sc.synth.resolution = 96;
  sc.synth.n_frames = 3;
  sc.synth.seed = 9;
  sc.synth.pose_yaw_deg = 11.0;
  nlohmann::ordered_json sj = synth_config_to_json(sc);
  SynthRunConfig sb;
  apply_synth_json(json::parse(sj.dump()), sb);
  REQUIRE(synth_config_to_json(sb).dump() == sj.dump());

  EvalRunConfig ec;
  ec.mesh_path = "a.obj";
  ec.scan_path = "b.ply";
  ec.mesh_landmarks_path = "c.txt";
  ec.scan_landmarks_path = "d.txt";
  ec.output_dir = "e";
  ec.metrical = true;
  ec.icp_iterations = 4;
  ec.threads = 2;
  nlohmann::ordered_json ej = eval_config_to_json(ec);
  EvalRunConfig eb;
  apply_eval_json(json::parse(ej.dump()), eb);
  REQUIRE(eval_config_to_json(eb).dump() == ej.dump());

  RenderRunConfig rc;
  rc.checkpoint_path = "st.ckpt";
  rc.model_path = "m.txt";
  rc.prior_path = "p.txt";
  rc.output_dir = "frames";
  rc.resolution = 200;
  rc.background = Vec3(0.1, 0.2, 0.3);
  rc.frame = 2;
  rc.yaw_offset_deg = -15.0;
  rc.threads = 4;
  nlohmann::ordered_json rj = render_config_to_json(rc);
  RenderRunConfig rb;
  apply_render_json(json::parse(rj.dump()), rb);
  REQUIRE(render_config_to_json(rb).dump() == rj.dump());

  REQUIRE_THROWS_AS(
      apply_render_json(json{{"background", {0.1, 0.2}}}, rb),
      ValidationError);
}

TEST_CASE("config files load with parse errors surfaced") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "splatrig_config_test";
  fs::create_directories(dir);

  {
    std::ofstream f(dir / "good.json");
    f << "{\"iterations\": 9}\n";
  }
  json j = load_config_file((dir / "good.json").string());
  REQUIRE(j["iterations"] == 9);

  {
    std::ofstream f(dir / "bad.json");
    f << "{\"iterations\": \n";
  }
  REQUIRE_THROWS_WITH(load_config_file((dir / "bad.json").string()),
                      Catch::Matchers::ContainsSubstring("parse error"));
  REQUIRE_THROWS_AS(load_config_file((dir / "missing.json").string()),
                    ValidationError);

  // Top-level config must be an object for section validation.
  FitRunConfig c;
  REQUIRE_THROWS_AS(apply_fit_json(json::array({1, 2}), c), ValidationError);

  fs::path echo_dir = dir / "echo" / "nested";
  echo_config(echo_dir.string(), fit_config_to_json(FitRunConfig{}));
  REQUIRE(fs::exists(echo_dir / "config_echo.json"));
  std::string echoed = slurp(echo_dir / "config_echo.json");
  REQUIRE(echoed.find("\"iterations\"") != std::string::npos);

  fs::remove_all(dir);
}
