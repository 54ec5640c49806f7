#include <catch_amalgamated.hpp>

#include <splatrig/demo_head.hpp>
#include <splatrig/fit.hpp>
#include <splatrig/shading.hpp>

#include "support/oracles.hpp"

#include <cmath>
#include <functional>

using namespace splatrig;

namespace {

struct Setup {
  BlendshapeModel model;
  LightingPrior prior;
  Camera camera;
  Vec3 background{0.15, 0.2, 0.25};
  std::vector<FrameTarget> targets;
  FitState gt;
  FitConfig cfg;
};

// Small head, low resolution, targets rendered from a nonzero ground truth.
Setup make_setup(int n_frames, int res = 32) {
  Setup s;
  s.model = make_demo_head(8, 12);
  s.prior = make_default_prior();
  s.camera = make_front_camera(res, res, 30.0, 1.0);
  s.cfg.resolution = res;
  s.cfg.t_densify = 0;
  s.cfg.render.n_threads = 1;

  s.gt = init_fit_state(s.model, n_frames, s.prior.dim(), s.cfg);
  Rng rng(901);
  for (Eigen::Index i = 0; i < s.gt.beta.size(); ++i)
    s.gt.beta[i] = 0.5 * rng.normal();
  for (auto& psi : s.gt.psi)
    for (Eigen::Index i = 0; i < psi.size(); ++i) psi[i] = 0.3 * rng.normal();
  for (Eigen::Index i = 0; i < s.gt.lighting.size(); ++i)
    s.gt.lighting[i] = 0.2 * rng.normal();
  for (int f = 0; f < n_frames; ++f) {
    double yaw = n_frames == 1 ? 0.0 : 0.1 * (2.0 * f / (n_frames - 1) - 1.0);
    s.gt.poses[static_cast<size_t>(f)].rotation =
        quat_from_axis_angle(Vec3(0, 1, 0), yaw);
  }
  for (auto& p : s.gt.protos) {
    p.albedo = Vec3(0.7, 0.55, 0.45) + 0.1 * rng.normal3();
    p.albedo = p.albedo.cwiseMax(0.05).cwiseMin(0.95);
    p.opacity_logit = 2.0 + 0.2 * rng.normal();
  }

  s.targets.resize(static_cast<size_t>(n_frames));
  for (int f = 0; f < n_frames; ++f) {
    FrameForward fw = forward_frame(s.model, s.prior, s.gt, f, s.camera,
                                    s.cfg.render, s.background);
    FrameTarget& t = s.targets[static_cast<size_t>(f)];
    t.camera = s.camera;
    t.image = fw.buffers.color;
    t.external_mask = fw.mesh.face_mask;
    t.landmarks.resize(fw.landmarks.size());
    for (size_t i = 0; i < fw.landmarks.size(); ++i)
      t.landmarks[i] = fw.landmarks[i].pixel;
  }
  return s;
}

bool protos_equal(const std::vector<GaussianPrototype>& a,
                  const std::vector<GaussianPrototype>& b) {
  if (a.size() != b.size()) return false;
  VecX fa = flatten_protos(a), fb = flatten_protos(b);
  return (fa.array() == fb.array()).all();
}

class ChannelMeanExtractor : public FeatureExtractor {
 public:
  std::string name() const override { return "chanmean"; }

  VecX features(const ImageBuf& image) const override {
    VecX f = VecX::Zero(image.channels);
    int n = image.width * image.height;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < image.channels; ++c)
        f[c] += image.data[static_cast<size_t>(i * image.channels + c)];
    return f / std::max(1, n);
  }

  ImageBuf loss_backward(const ImageBuf& rendered,
                         const VecX& target) const override {
    ImageBuf g(rendered.width, rendered.height, rendered.channels);
    VecX a = features(rendered);
    double na = a.norm(), nb = target.norm();
    if (na < 1e-12 || nb < 1e-12) return g;
    VecX ga = -target / (na * nb) + a * (a.dot(target) / (na * na * na * nb));
    double inv_n = 1.0 / (rendered.width * rendered.height);
    for (int i = 0; i < rendered.width * rendered.height; ++i)
      for (int c = 0; c < rendered.channels; ++c)
        g.data[static_cast<size_t>(i * rendered.channels + c)] = ga[c] * inv_n;
    return g;
  }
};

}  // namespace

TEST_CASE("objective gradients match finite differences end to end") {
  // Differencing runs at the production render settings.  The forward is
  // piecewise smooth there: weight-cutoff and depth-gate boundaries and the
  // absolute-value losses leave measure-zero steps and kinks, handled by the
  // skip logic below.  Pushing the cutoff toward zero instead would admit
  // pixels whose accumulated alpha sits at the 1 - (1 - a) rounding floor,
  // where finite differences carry a step-size-independent bias and stop
  // being a usable reference.
  Setup s = make_setup(1);
  s.cfg.weights.w_l1 = 1.0;
  s.cfg.weights.w_lmk = 0.5;
  s.cfg.weights.w_normals = 0.25;
  s.cfg.weights.w_depth = 0.25;
  s.cfg.weights.w_offset = 0.2;
  s.cfg.weights.w_scale = 0.1;
  s.cfg.weights.w_opacity = 0.02;
  s.cfg.weights.w_expr = 0.05;
  s.cfg.weights.w_shape = 0.05;

  // Evaluate at a generic point away from the ground truth.
  FitState st = init_fit_state(s.model, 1, s.prior.dim(), s.cfg);
  Rng rng(902);
  for (auto& p : st.protos) {
    p.offset += 0.005 * rng.normal3();
    p.rotation += 0.05 * Vec4(rng.normal(), rng.normal(), rng.normal(),
                              rng.normal());
    p.log_scale += Vec2(0.1 * rng.normal(), 0.1 * rng.normal());
    p.opacity_logit = 0.8 + 0.2 * rng.normal();
    p.albedo = Vec3(0.5, 0.5, 0.5) + 0.15 * rng.normal3();
  }
  for (Eigen::Index i = 0; i < st.beta.size(); ++i)
    st.beta[i] = 0.1 * rng.normal();
  for (Eigen::Index i = 0; i < st.psi[0].size(); ++i)
    st.psi[0][i] = 0.1 * rng.normal();
  st.poses[0].rotation = quat_from_axis_angle(Vec3(0.2, 1, 0.1).normalized(),
                                              0.03);
  st.poses[0].translation = Vec3(0.001, -0.002, 0.001);
  for (Eigen::Index i = 0; i < st.lighting.size(); ++i)
    st.lighting[i] = 0.1 * rng.normal();

  // Freeze the mesh supervision so the differentiated functional is fixed.
  std::vector<MeshBuffers> fixed_mesh;
  {
    FrameForward fw = forward_frame(s.model, s.prior, st, 0, s.camera,
                                    s.cfg.render, s.background);
    fixed_mesh.push_back(fw.mesh);
  }

  auto total_at = [&](const FitState& x) {
    ObjectiveOptions o;
    o.fixed_mesh = &fixed_mesh;
    return evaluate_objective(s.model, s.prior, s.targets, s.background, x,
                              s.cfg, o)
        .total;
  };

  ObjectiveGrads grads;
  {
    ObjectiveOptions o;
    o.fixed_mesh = &fixed_mesh;
    o.grads = &grads;
    evaluate_objective(s.model, s.prior, s.targets, s.background, st, s.cfg, o);
  }

  // A probe interval that straddles a cutoff/gate boundary or a loss kink
  // yields a finite difference unrelated to the gradient.  Such probes
  // betray themselves by step-size dependence: the estimates at h and h/2
  // disagree, and the probe is skipped rather than compared.  Smooth probes
  // must stay cheap, so the half-step estimate is only computed when the
  // full-step one disagrees with the analytic value.
  const double h = 1e-5;
  int n_checked = 0, n_skipped = 0;
  auto probe = [&](double analytic,
                   const std::function<double(double)>& total_at_offset) {
    double fd = (total_at_offset(h) - total_at_offset(-h)) / (2 * h);
    if (oracle::rel_err(analytic, fd, 1e-4) >= 2e-3) {
      double fd2 = (total_at_offset(h / 2) - total_at_offset(-h / 2)) / h;
      if (oracle::rel_err(fd, fd2, 1e-3) > 5e-3) {
        ++n_skipped;
        return;
      }
      fd = fd2;
    }
    ++n_checked;
    INFO("analytic " << analytic << " numeric " << fd);
    REQUIRE(oracle::rel_err(analytic, fd, 1e-4) < 2e-3);
  };

  // Splat parameters: a spread of flat indices.
  VecX p0 = flatten_protos(st.protos);
  VecX pg = flatten_proto_grads(grads.protos);
  Rng pick(903);
  for (int k = 0; k < 14; ++k) {
    Eigen::Index idx = pick.uniform_int(static_cast<int>(p0.size()));
    probe(pg[idx], [&](double d) {
      FitState x = st;
      VecX p = p0;
      p[idx] += d;
      unflatten_protos(p, x.protos);
      return total_at(x);
    });
  }

  // Shape and expression codes.
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(4, st.beta.size()); ++i)
    probe(grads.beta[i], [&](double d) {
      FitState x = st;
      x.beta[i] += d;
      return total_at(x);
    });
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(3, st.psi[0].size());
       ++i)
    probe(grads.psi[0][i], [&](double d) {
      FitState x = st;
      x.psi[0][i] += d;
      return total_at(x);
    });

  // Pose: all 11 raw parameters.
  VecX q0 = flatten_pose(st.poses[0]);
  VecX qg = flatten_pose_grad(grads.poses[0]);
  for (Eigen::Index i = 0; i < kPoseParams; ++i)
    probe(qg[i], [&](double d) {
      FitState x = st;
      VecX q = q0;
      q[i] += d;
      unflatten_pose(q, x.poses[0]);
      return total_at(x);
    });

  // Lighting code.
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(3, st.lighting.size());
       ++i)
    probe(grads.lighting[i], [&](double d) {
      FitState x = st;
      x.lighting[i] += d;
      return total_at(x);
    });

  // Kink straddles must stay the exception, not the rule.
  REQUIRE(n_checked >= 28);
  REQUIRE(n_skipped <= 4);
}

TEST_CASE("fitting a synthetic target reduces the loss") {
  Setup s = make_setup(2);
  s.cfg.iterations = 40;
  s.cfg.lr_splats = 5e-3;
  s.cfg.lr_shape = 5e-3;
  s.cfg.lr_expr = 5e-3;
  s.cfg.lr_pose = 2e-3;
  s.cfg.lr_lighting = 2e-2;
  // The splat regularizers sum over prototypes (168 here), so their weights
  // sit well below the data terms or they drown the descent signal.
  s.cfg.weights.w_l1 = 1.0;
  s.cfg.weights.w_lmk = 1.0;
  s.cfg.weights.w_normals = 0.05;
  s.cfg.weights.w_depth = 0.1;
  s.cfg.weights.w_offset = 0.01;
  s.cfg.weights.w_scale = 0.01;
  s.cfg.weights.w_opacity = 5e-5;
  s.cfg.weights.w_expr = 1e-3;
  s.cfg.weights.w_shape = 1e-3;

  FitState st = init_fit_state(s.model, 2, s.prior.dim(), s.cfg);
  FitResult r = fit(s.model, s.prior, s.targets, s.background, std::move(st),
                    s.cfg);
  REQUIRE(r.reports.size() == 40);
  REQUIRE(r.reports.back().total < 0.8 * r.reports.front().total);
  REQUIRE(r.state.iteration == 40);
}

TEST_CASE("zero learning rate freezes a parameter group bitwise") {
  Setup s = make_setup(1);
  s.cfg.iterations = 4;
  s.cfg.lr_shape = 0.0;
  s.cfg.lr_pose = 0.0;
  s.cfg.weights.w_l1 = 1.0;
  s.cfg.weights.w_lmk = 1.0;

  FitState st = init_fit_state(s.model, 1, s.prior.dim(), s.cfg);
  Rng rng(904);
  for (Eigen::Index i = 0; i < st.beta.size(); ++i)
    st.beta[i] = 0.2 * rng.normal();
  st.poses[0].translation = Vec3(0.003, -0.001, 0.002);
  FitState before = st;

  FitResult r = fit(s.model, s.prior, s.targets, s.background, std::move(st),
                    s.cfg);
  REQUIRE((r.state.beta.array() == before.beta.array()).all());
  REQUIRE((r.state.poses[0].rotation.array() ==
           before.poses[0].rotation.array())
              .all());
  REQUIRE((r.state.poses[0].translation.array() ==
           before.poses[0].translation.array())
              .all());
  REQUIRE(!protos_equal(r.state.protos, before.protos));  // others moved
}

TEST_CASE("all-zero loss weights leave every parameter untouched") {
  Setup s = make_setup(1);
  s.cfg.iterations = 3;
  s.cfg.weights = LossWeights();
  s.cfg.weights.w_l1 = 0.0;
  s.cfg.weights.w_lmk = 0.0;
  s.cfg.weights.w_normals = 0.0;
  s.cfg.weights.w_depth = 0.0;
  s.cfg.weights.w_offset = 0.0;
  s.cfg.weights.w_scale = 0.0;
  s.cfg.weights.w_opacity = 0.0;
  s.cfg.weights.w_expr = 0.0;
  s.cfg.weights.w_shape = 0.0;

  FitState st = init_fit_state(s.model, 1, s.prior.dim(), s.cfg);
  FitState before = st;
  FitResult r = fit(s.model, s.prior, s.targets, s.background, std::move(st),
                    s.cfg);
  for (const auto& rep : r.reports) REQUIRE(rep.total == 0.0);
  REQUIRE(protos_equal(r.state.protos, before.protos));
  REQUIRE((r.state.beta.array() == before.beta.array()).all());
  REQUIRE((r.state.psi[0].array() == before.psi[0].array()).all());
  REQUIRE((r.state.lighting.array() == before.lighting.array()).all());
  REQUIRE((flatten_pose(r.state.poses[0]).array() ==
           flatten_pose(before.poses[0]).array())
              .all());
}

TEST_CASE("densification fires exactly on its schedule") {
  Setup s = make_setup(1);
  s.cfg.iterations = 7;
  s.cfg.t_densify = 3;
  s.cfg.t_history = 3;
  s.cfg.n_prune = 2;
  s.cfg.n_densify = 2;
  s.cfg.noise_scale = 0.01;
  s.cfg.weights.w_l1 = 1.0;

  FitState st = init_fit_state(s.model, 1, s.prior.dim(), s.cfg);
  FitResult r = fit(s.model, s.prior, s.targets, s.background, std::move(st),
                    s.cfg);
  REQUIRE(r.densify_events.size() == 2);
  REQUIRE(r.densify_events[0].iteration == 3);
  REQUIRE(r.densify_events[1].iteration == 6);
  for (const DensifyEvent& ev : r.densify_events) {
    REQUIRE(ev.count_after ==
            ev.count_before - ev.outcome.removed_indices.size() +
                ev.outcome.cloned_from.size());
    size_t total = 0;
    for (int c : ev.face_counts_after) {
      REQUIRE(c >= 1);
      REQUIRE(c <= 6);
      total += static_cast<size_t>(c);
    }
    REQUIRE(total == ev.count_after);
  }
  const DensifyEvent& last = r.densify_events.back();
  REQUIRE(r.state.protos.size() == last.count_after);
  REQUIRE(r.state.ref_log_scales.size() == last.count_after);
  REQUIRE(r.state.adam_splats.m.size() ==
          kProtoParams * static_cast<Eigen::Index>(last.count_after));
}

TEST_CASE("fits are bitwise reproducible per seed") {
  Setup s = make_setup(1);
  s.cfg.iterations = 5;
  s.cfg.t_densify = 2;
  s.cfg.n_prune = 1;
  s.cfg.n_densify = 1;
  s.cfg.noise_scale = 0.1;
  s.cfg.weights.w_l1 = 1.0;
  s.cfg.weights.w_lmk = 0.5;
  s.cfg.seed = 7;

  auto run = [&](uint64_t seed) {
    FitConfig cfg = s.cfg;
    cfg.seed = seed;
    FitState st = init_fit_state(s.model, 1, s.prior.dim(), cfg);
    auto targets = s.targets;
    return fit(s.model, s.prior, targets, s.background, std::move(st), cfg);
  };
  FitResult a = run(7), b = run(7), c = run(8);

  REQUIRE(a.reports.size() == b.reports.size());
  for (size_t i = 0; i < a.reports.size(); ++i)
    REQUIRE(a.reports[i].total == b.reports[i].total);
  REQUIRE(protos_equal(a.state.protos, b.state.protos));
  // A different seed changes the densification noise, hence the trajectory.
  REQUIRE(!protos_equal(a.state.protos, c.state.protos));
}

TEST_CASE("non-finite losses abort the fit loudly") {
  Setup s = make_setup(1);
  s.cfg.iterations = 2;
  s.cfg.weights.w_l1 = 1.0;
  s.targets[0].image.data[0] = std::nan("");

  FitState st = init_fit_state(s.model, 1, s.prior.dim(), s.cfg);
  REQUIRE_THROWS_AS(
      fit(s.model, s.prior, s.targets, s.background, std::move(st), s.cfg),
      NumericalError);
}

TEST_CASE("configuration and target validation") {
  Setup s = make_setup(1);
  FitState st = init_fit_state(s.model, 1, s.prior.dim(), s.cfg);

  FitConfig bad = s.cfg;
  bad.detach_mesh_targets = false;
  REQUIRE_THROWS_AS(
      fit(s.model, s.prior, s.targets, s.background, st, bad),
      ValidationError);

  bad = s.cfg;
  bad.lr_shape = -1.0;
  REQUIRE_THROWS_AS(
      fit(s.model, s.prior, s.targets, s.background, st, bad),
      ValidationError);

  auto mismatched = s.targets;
  mismatched[0].image = ImageBuf(16, 16, 3);
  REQUIRE_THROWS_AS(
      fit(s.model, s.prior, mismatched, s.background, st, s.cfg),
      ValidationError);

  std::vector<FrameTarget> empty;
  REQUIRE_THROWS_AS(evaluate_objective(s.model, s.prior, empty, s.background,
                                       st, s.cfg),
                    ValidationError);

  FitState wrong = init_fit_state(s.model, 2, s.prior.dim(), s.cfg);
  REQUIRE_THROWS_AS(evaluate_objective(s.model, s.prior, s.targets,
                                       s.background, wrong, s.cfg),
                    ValidationError);
}

TEST_CASE("checkpoint conversion rebuilds an equivalent state") {
  Setup s = make_setup(1);
  s.cfg.iterations = 5;
  s.cfg.t_densify = 2;
  s.cfg.n_prune = 1;
  s.cfg.n_densify = 1;
  s.cfg.weights.w_l1 = 1.0;
  s.cfg.weights.w_lmk = 0.5;
  s.cfg.seed = 11;

  FitState st = init_fit_state(s.model, 1, s.prior.dim(), s.cfg);
  FitResult r = fit(s.model, s.prior, s.targets, s.background, std::move(st),
                    s.cfg);

  Checkpoint c = state_to_checkpoint(r.state);
  FitState rb = checkpoint_to_state(c, s.model, s.cfg);
  REQUIRE(protos_equal(rb.protos, r.state.protos));
  REQUIRE((rb.beta.array() == r.state.beta.array()).all());
  REQUIRE((rb.lighting.array() == r.state.lighting.array()).all());
  REQUIRE(rb.iteration == r.state.iteration);
  REQUIRE(rb.seed == r.state.seed);
  REQUIRE(rb.adam_splats.t == r.state.adam_splats.t);
  REQUIRE((rb.adam_splats.m.array() == r.state.adam_splats.m.array()).all());
  REQUIRE((rb.adam_splats.v.array() == r.state.adam_splats.v.array()).all());

  // The scale-reg reference is recomputed per parent face; clones inherit
  // their source's face, so the rebuilt references match the originals.
  REQUIRE(rb.ref_log_scales.size() == r.state.ref_log_scales.size());
  for (size_t i = 0; i < rb.ref_log_scales.size(); ++i)
    REQUIRE((rb.ref_log_scales[i] - r.state.ref_log_scales[i]).norm() == 0.0);

  double t_orig = evaluate_objective(s.model, s.prior, s.targets, s.background,
                                     r.state, s.cfg)
                      .total;
  double t_rb = evaluate_objective(s.model, s.prior, s.targets, s.background,
                                   rb, s.cfg)
                    .total;
  REQUIRE(t_orig == t_rb);
}

TEST_CASE("plugged feature extractors contribute a named loss term") {
  Setup s = make_setup(1);
  s.cfg.iterations = 3;
  s.cfg.weights.w_l1 = 1.0;
  s.cfg.weights.w_feature = 0.5;

  std::vector<std::shared_ptr<FeatureExtractor>> ex = {
      std::make_shared<ChannelMeanExtractor>()};
  FitState st = init_fit_state(s.model, 1, s.prior.dim(), s.cfg);
  auto targets = s.targets;
  FitResult r = fit(s.model, s.prior, targets, s.background, std::move(st),
                    s.cfg, nullptr, ex);
  REQUIRE(targets[0].target_features.size() == 3);
  for (const auto& rep : r.reports) {
    REQUIRE(rep.terms.count("feat_chanmean") == 1);
    REQUIRE(rep.terms.at("feat_chanmean") >= 0.0);
  }

  std::vector<std::shared_ptr<FeatureExtractor>> two = {
      std::make_shared<ChannelMeanExtractor>(),
      std::make_shared<ChannelMeanExtractor>()};
  FitState st2 = init_fit_state(s.model, 1, s.prior.dim(), s.cfg);
  REQUIRE_THROWS_AS(fit(s.model, s.prior, targets, s.background,
                        std::move(st2), s.cfg, nullptr, two),
                    ValidationError);
}
