#include <catch_amalgamated.hpp>

#include <splatrig/blendshape.hpp>
#include <splatrig/core.hpp>
#include <splatrig/gaussian_rig.hpp>
#include <splatrig/quaternion.hpp>

#include "support/oracles.hpp"

using namespace splatrig;

namespace {

std::vector<GaussianPrototype> random_protos(Rng& rng, int n, int n_faces) {
  std::vector<GaussianPrototype> protos(static_cast<size_t>(n));
  for (auto& p : protos) {
    p.parent_face = rng.uniform_int(n_faces);
    p.offset = 0.5 * rng.normal3();
    p.rotation = Vec4(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    if (p.rotation.norm() < 0.5) p.rotation = quat_identity();
    p.log_scale = Vec2(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5));
    p.opacity_logit = rng.uniform(-2.0, 2.0);
    p.albedo = Vec3(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1));
  }
  return protos;
}

std::vector<Vec3> random_verts(Rng& rng, int n) {
  std::vector<Vec3> v(static_cast<size_t>(n));
  for (auto& p : v) p = 0.1 * rng.normal3();
  return v;
}

}  // namespace

TEST_CASE("zero-offset prototype binds to the face centroid") {
  std::vector<Vec3> verts = {Vec3(0.2, 0.1, -0.3), Vec3(0.5, 0.4, 0.1),
                             Vec3(-0.1, 0.3, 0.2)};
  std::vector<Eigen::Vector3i> faces = {Eigen::Vector3i(0, 1, 2)};
  auto frames = triangle_frames(verts, faces);

  GaussianPrototype p;  // defaults: zero offset, identity rotation
  auto splats = bind_splats({p}, frames);
  REQUIRE(splats.size() == 1);
  REQUIRE(splats[0].valid);
  Vec3 centroid = (verts[0] + verts[1] + verts[2]) / 3.0;
  REQUIRE((splats[0].center - centroid).norm() < 1e-15);
  REQUIRE((splats[0].rotation - frames[0].rotation).norm() < 1e-14);
  REQUIRE(splats[0].opacity == Catch::Approx(0.5));
}

TEST_CASE("unit normal offset binds one scale unit above the centroid") {
  // Right triangle in the xy plane: frame scales are (1, 1, 1) and the
  // normal is +z, so offset (0, 0, 1) lands at centroid + z.
  std::vector<Vec3> verts = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0)};
  std::vector<Eigen::Vector3i> faces = {Eigen::Vector3i(0, 1, 2)};
  auto frames = triangle_frames(verts, faces);
  REQUIRE(frames[0].scale.isApprox(Vec3(1, 1, 1)));

  GaussianPrototype p;
  p.offset = Vec3(0, 0, 1);
  auto splats = bind_splats({p}, frames);
  REQUIRE((splats[0].center - Vec3(1.0 / 3, 1.0 / 3, 1.0)).norm() < 1e-15);
}

TEST_CASE("binding is equivariant under rigid motion of the mesh") {
  Rng rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    auto verts = random_verts(rng, 9);
    std::vector<Eigen::Vector3i> faces = {Eigen::Vector3i(0, 1, 2),
                                          Eigen::Vector3i(3, 4, 5),
                                          Eigen::Vector3i(6, 7, 8)};
    auto protos = random_protos(rng, 6, 3);

    Mat3 r = quat_to_rot(quat_from_axis_angle(rng.normal3().normalized(),
                                              rng.uniform(-kPi, kPi)));
    Vec3 t = rng.normal3();
    std::vector<Vec3> moved(verts.size());
    for (size_t i = 0; i < verts.size(); ++i) moved[i] = r * verts[i] + t;

    auto s0 = bind_splats(protos, triangle_frames(verts, faces));
    auto s1 = bind_splats(protos, triangle_frames(moved, faces));
    for (size_t i = 0; i < s0.size(); ++i) {
      REQUIRE((s1[i].center - (r * s0[i].center + t)).norm() < 1e-6);
      REQUIRE((s1[i].rotation - r * s0[i].rotation).norm() < 1e-6);
      REQUIRE((s1[i].scales - s0[i].scales).norm() < 1e-6);
      REQUIRE(s1[i].opacity == s0[i].opacity);
      REQUIRE(s1[i].albedo == s0[i].albedo);
    }
  }
}

TEST_CASE("world scales multiply frame scale by exp(log_scale)") {
  std::vector<Vec3> verts = {Vec3(0, 0, 0), Vec3(2, 0, 0), Vec3(0, 1, 0)};
  std::vector<Eigen::Vector3i> faces = {Eigen::Vector3i(0, 1, 2)};
  auto frames = triangle_frames(verts, faces);

  GaussianPrototype p;
  p.log_scale = Vec2(std::log(0.5), std::log(3.0));
  auto splats = bind_splats({p}, frames);
  REQUIRE(splats[0].scales.x() == Catch::Approx(2.0 * 0.5).epsilon(1e-12));
  REQUIRE(splats[0].scales.y() == Catch::Approx(1.0 * 3.0).epsilon(1e-12));

  // Opacity is the logistic of the logit.
  p.opacity_logit = 2.0;
  REQUIRE(p.opacity() == Catch::Approx(1.0 / (1.0 + std::exp(-2.0))));
}

TEST_CASE("degenerate parent faces mark splats invalid and are counted") {
  std::vector<Vec3> verts = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0),
                             Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(2, 0, 0)};
  std::vector<Eigen::Vector3i> faces = {Eigen::Vector3i(0, 1, 2),
                                        Eigen::Vector3i(3, 4, 5)};
  auto frames = triangle_frames(verts, faces);
  REQUIRE_FALSE(frames[1].valid);

  GaussianPrototype a, b;
  a.parent_face = 0;
  b.parent_face = 1;
  int skipped = -1;
  auto splats = bind_splats({a, b}, frames, &skipped);
  REQUIRE(skipped == 1);
  REQUIRE(splats[0].valid);
  REQUIRE_FALSE(splats[1].valid);

  GaussianPrototype c;
  c.parent_face = 7;
  REQUIRE_THROWS_AS(bind_splats({c}, frames), ValidationError);
}

TEST_CASE("bind_splats_backward matches central differences") {
  Rng rng(22);
  auto verts = random_verts(rng, 6);
  std::vector<Eigen::Vector3i> faces = {Eigen::Vector3i(0, 1, 2),
                                        Eigen::Vector3i(3, 4, 5)};
  auto protos = random_protos(rng, 4, 2);

  // Random linear functional over every world splat field.
  std::vector<WorldSplatGrad> weights(protos.size());
  for (auto& w : weights) {
    w.center = rng.normal3();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) w.rotation(a, b) = rng.normal();
    w.scales = Vec2(rng.normal(), rng.normal());
    w.opacity = rng.normal();
    w.albedo = rng.normal3();
  }
  auto loss = [&](const std::vector<GaussianPrototype>& ps,
                  const std::vector<Vec3>& vs) {
    auto splats = bind_splats(ps, triangle_frames(vs, faces));
    double acc = 0.0;
    for (size_t i = 0; i < splats.size(); ++i) {
      acc += weights[i].center.dot(splats[i].center) +
             (weights[i].rotation.array() * splats[i].rotation.array()).sum() +
             weights[i].scales.dot(splats[i].scales) +
             weights[i].opacity * splats[i].opacity +
             weights[i].albedo.dot(splats[i].albedo);
    }
    return acc;
  };

  auto frames = triangle_frames(verts, faces);
  std::vector<PrototypeGrad> grad_protos;
  std::vector<TriangleFrameGrad> grad_frames(frames.size());
  bind_splats_backward(protos, frames, weights, grad_protos, grad_frames);

  const double step = 1e-6;
  for (size_t pi = 0; pi < protos.size(); ++pi) {
    auto check = [&](double analytic, double* slot) {
      double numeric = oracle::fd_central(slot, step,
                                          [&] { return loss(protos, verts); });
      REQUIRE(oracle::rel_err(analytic, numeric, 1e-5) < 1e-5);
    };
    for (int k = 0; k < 3; ++k)
      check(grad_protos[pi].offset[k], &protos[pi].offset[k]);
    for (int k = 0; k < 4; ++k)
      check(grad_protos[pi].rotation[k], &protos[pi].rotation[k]);
    for (int k = 0; k < 2; ++k)
      check(grad_protos[pi].log_scale[k], &protos[pi].log_scale[k]);
    check(grad_protos[pi].opacity_logit, &protos[pi].opacity_logit);
    for (int k = 0; k < 3; ++k)
      check(grad_protos[pi].albedo[k], &protos[pi].albedo[k]);
  }

  // Chain frame gradients down to vertices and compare against FD on the
  // vertex coordinates (full bind-through-frame composition).
  std::vector<Vec3> grad_verts(verts.size(), Vec3::Zero());
  for (size_t fi = 0; fi < faces.size(); ++fi) {
    const auto& f = faces[fi];
    triangle_frame_backward(verts[static_cast<size_t>(f[0])],
                            verts[static_cast<size_t>(f[1])],
                            verts[static_cast<size_t>(f[2])], grad_frames[fi],
                            grad_verts[static_cast<size_t>(f[0])],
                            grad_verts[static_cast<size_t>(f[1])],
                            grad_verts[static_cast<size_t>(f[2])]);
  }
  for (size_t vi = 0; vi < verts.size(); ++vi)
    for (int k = 0; k < 3; ++k) {
      double numeric = oracle::fd_central(&verts[vi][k], step,
                                          [&] { return loss(protos, verts); });
      REQUIRE(oracle::rel_err(grad_verts[vi][k], numeric, 1e-4) < 1e-4);
    }
}

TEST_CASE("initial prototypes sit at centroids with half-mean-edge radius") {
  Rng rng(23);
  auto verts = random_verts(rng, 6);
  std::vector<Eigen::Vector3i> faces = {Eigen::Vector3i(0, 1, 2),
                                        Eigen::Vector3i(3, 4, 5)};
  auto frames = triangle_frames(verts, faces);
  auto protos = init_prototypes(verts, faces, frames);
  REQUIRE(protos.size() == faces.size());

  auto splats = bind_splats(protos, frames);
  for (size_t i = 0; i < protos.size(); ++i) {
    REQUIRE(protos[i].parent_face == static_cast<int>(i));
    const auto& f = faces[i];
    Vec3 a = verts[static_cast<size_t>(f[0])];
    Vec3 b = verts[static_cast<size_t>(f[1])];
    Vec3 c = verts[static_cast<size_t>(f[2])];
    double mean_edge =
        ((b - a).norm() + (c - b).norm() + (a - c).norm()) / 3.0;
    // World-space radius is isotropic: half the mean edge on both axes.
    REQUIRE(splats[i].scales.x() ==
            Catch::Approx(0.5 * mean_edge).epsilon(1e-12));
    REQUIRE(splats[i].scales.y() ==
            Catch::Approx(0.5 * mean_edge).epsilon(1e-12));
    REQUIRE((splats[i].center - (a + b + c) / 3.0).norm() < 1e-15);
  }
}

TEST_CASE("densify prunes lowest opacity but never empties a face") {
  // Faces: 0 holds {A, B}, 1 holds {C}, 2 holds {D, E, F}.
  std::vector<GaussianPrototype> protos(6);
  int faces_of[6] = {0, 0, 1, 2, 2, 2};
  for (int i = 0; i < 6; ++i) {
    protos[static_cast<size_t>(i)].parent_face = faces_of[i];
    protos[static_cast<size_t>(i)].offset = Vec3(i, 0, 0);
  }
  DensifyStats stats;
  stats.window = 10;
  stats.reset(6);
  // Mean opacities: A=.9 B=.1 C=.05 D=.5 E=.2 F=.3; grads favor D then A.
  std::vector<double> ops = {0.9, 0.1, 0.05, 0.5, 0.2, 0.3};
  std::vector<double> grads = {5.0, 0.1, 0.2, 9.0, 0.3, 0.4};
  for (int t = 0; t < 3; ++t) stats.push(ops, grads);

  Rng rng(31);
  auto outcome = densify_and_prune(protos, stats, 3, /*n_prune=*/2,
                                   /*n_densify=*/2, 0.05, rng);

  // C has the lowest opacity but is alone on face 1, so B and E go.
  REQUIRE(outcome.n_pruned == 2);
  REQUIRE(outcome.prune_deficit == 0);
  REQUIRE(outcome.removed_indices == std::vector<int>{1, 4});

  // D has the highest gradient, then A.
  REQUIRE(outcome.n_cloned == 2);
  REQUIRE(outcome.clone_deficit == 0);
  REQUIRE(outcome.cloned_from == std::vector<int>{3, 0});

  // Survivors keep their original order, clones append at the end.
  REQUIRE(protos.size() == 6);
  REQUIRE(protos[0].offset.x() == 0.0);  // A
  REQUIRE(protos[1].offset.x() == 2.0);  // C
  REQUIRE(protos[2].offset.x() == 3.0);  // D
  REQUIRE(protos[3].offset.x() == 5.0);  // F
  REQUIRE(protos[4].parent_face == 2);   // clone of D
  REQUIRE(protos[5].parent_face == 0);   // clone of A

  // Clones are noise-perturbed copies.
  REQUIRE((protos[4].offset - Vec3(3, 0, 0)).norm() > 0.0);
  REQUIRE((protos[4].offset - Vec3(3, 0, 0)).norm() < 1.0);

  // Histories were rebuilt for the new list.
  REQUIRE(stats.opacity_hist.size() == protos.size());
  for (const auto& h : stats.opacity_hist) REQUIRE(h.empty());

  auto counts = face_splat_counts(protos, 3);
  REQUIRE(counts == std::vector<int>{2, 1, 3});
}

TEST_CASE("densify reports deficits when constraints bind") {
  // One face, one splat: nothing can be pruned.
  std::vector<GaussianPrototype> protos(1);
  DensifyStats stats;
  stats.reset(1);
  stats.push({0.01}, {1.0});
  Rng rng(32);
  auto outcome = densify_and_prune(protos, stats, 1, 1, 0, 0.0, rng);
  REQUIRE(outcome.n_pruned == 0);
  REQUIRE(outcome.prune_deficit == 1);
  REQUIRE(protos.size() == 1);

  // One face already at the cap: nothing can be cloned.
  protos.assign(6, GaussianPrototype{});
  stats.reset(6);
  stats.push({.5, .5, .5, .5, .5, .5}, {1, 1, 1, 1, 1, 1});
  outcome = densify_and_prune(protos, stats, 1, 0, 3, 0.0, rng);
  REQUIRE(outcome.n_cloned == 0);
  REQUIRE(outcome.clone_deficit == 3);
  REQUIRE(protos.size() == 6);

  // Count identity: after = before - pruned + cloned.
  protos.assign(4, GaussianPrototype{});
  protos[1].parent_face = 0;
  protos[2].parent_face = 0;
  protos[3].parent_face = 0;
  stats.reset(4);
  stats.push({0.9, 0.1, 0.2, 0.3}, {0.1, 2.0, 0.2, 0.3});
  size_t before = protos.size();
  outcome = densify_and_prune(protos, stats, 1, 1, 1, 0.0, rng);
  REQUIRE(protos.size() ==
          before - static_cast<size_t>(outcome.n_pruned) +
              static_cast<size_t>(outcome.n_cloned));

  // Zero noise clones are exact copies.
  REQUIRE(outcome.n_cloned == 1);
  int src = outcome.cloned_from[0];
  (void)src;
  const auto& clone = protos.back();
  bool matches_any = false;
  for (const auto& p : protos)
    if (&p != &clone && p.parent_face == clone.parent_face &&
        (p.offset - clone.offset).norm() == 0.0 &&
        (p.log_scale - clone.log_scale).norm() == 0.0)
      matches_any = true;
  REQUIRE(matches_any);
}

TEST_CASE("per-face counts stay within bounds under repeated densify") {
  Rng rng(33);
  std::vector<GaussianPrototype> protos;
  const int n_faces = 5;
  for (int f = 0; f < n_faces; ++f) {
    GaussianPrototype p;
    p.parent_face = f;
    protos.push_back(p);
  }
  DensifyStats stats;
  stats.window = 4;
  stats.reset(protos.size());

  for (int round = 0; round < 10; ++round) {
    std::vector<double> ops, grads;
    for (size_t i = 0; i < protos.size(); ++i) {
      ops.push_back(rng.uniform(0.0, 1.0));
      grads.push_back(rng.uniform(0.0, 1.0));
    }
    stats.push(ops, grads);
    auto outcome = densify_and_prune(protos, stats, n_faces, 2, 3, 0.01, rng);
    (void)outcome;
    auto counts = face_splat_counts(protos, n_faces);
    for (int c : counts) {
      REQUIRE(c >= kMinSplatsPerFace);
      REQUIRE(c <= kMaxSplatsPerFace);
    }
  }
}
