#include <catch_amalgamated.hpp>

#include <splatrig/camera.hpp>
#include <splatrig/core.hpp>

#include "support/oracles.hpp"

using namespace splatrig;

TEST_CASE("camera validation rejects bad parameters") {
  Camera cam;
  cam.width = 4;
  REQUIRE_THROWS_AS(cam.validate(), ValidationError);
  cam.width = 64;
  cam.height = 7;
  REQUIRE_THROWS_AS(cam.validate(), ValidationError);
  cam.height = 64;
  cam.fov_y_deg = 0.0;
  REQUIRE_THROWS_AS(cam.validate(), ValidationError);
  cam.fov_y_deg = 180.0;
  REQUIRE_THROWS_AS(cam.validate(), ValidationError);
  cam.fov_y_deg = 45.0;
  cam.near_clip = 0.0;
  REQUIRE_THROWS_AS(cam.validate(), ValidationError);
  cam.near_clip = 2.0;
  cam.far_clip = 1.0;
  REQUIRE_THROWS_AS(cam.validate(), ValidationError);
  cam.near_clip = 0.01;
  cam.far_clip = 100.0;
  REQUIRE_NOTHROW(cam.validate());
}

TEST_CASE("focal length follows the vertical field of view") {
  Camera cam;
  cam.width = 128;
  cam.height = 64;
  cam.fov_y_deg = 90.0;
  // tan(45 deg) = 1, so f = H/2.
  REQUIRE(cam.focal() == Catch::Approx(32.0).epsilon(1e-12));
}

TEST_CASE("projection puts the optical axis at the image center, y up") {
  Camera cam;
  cam.width = 100;
  cam.height = 80;
  cam.fov_y_deg = 60.0;

  Vec2 uv = cam.project(Vec3(0, 0, 2.0));
  REQUIRE(uv.x() == Catch::Approx(50.0));
  REQUIRE(uv.y() == Catch::Approx(40.0));

  // A point above the axis (+y camera frame) lands in the upper image half
  // (smaller v).
  Vec2 up = cam.project(Vec3(0, 0.5, 2.0));
  REQUIRE(up.y() < 40.0);
  // A point to the right (+x) lands at larger u.
  Vec2 right = cam.project(Vec3(0.5, 0, 2.0));
  REQUIRE(right.x() > 50.0);

  // Perspective division: doubling z halves the offset.
  Vec2 near_pt = cam.project(Vec3(0.1, 0.2, 1.0));
  Vec2 far_pt = cam.project(Vec3(0.1, 0.2, 2.0));
  REQUIRE((far_pt - Vec2(50, 40)).norm() ==
          Catch::Approx(0.5 * (near_pt - Vec2(50, 40)).norm()).epsilon(1e-12));
}

TEST_CASE("pixel_ray passes through the pixel center") {
  Camera cam;
  cam.width = 64;
  cam.height = 48;
  cam.fov_y_deg = 50.0;
  for (auto [px, py] : {std::pair{0, 0}, {31, 20}, {63, 47}}) {
    Vec3 d = cam.pixel_ray(px, py);
    REQUIRE(d.norm() == Catch::Approx(1.0).epsilon(1e-12));
    Vec3 p = d * (3.0 / d.z());  // point on the ray at z = 3
    Vec2 uv = cam.project(p);
    REQUIRE(uv.x() == Catch::Approx(px + 0.5).margin(1e-9));
    REQUIRE(uv.y() == Catch::Approx(py + 0.5).margin(1e-9));
  }
}

TEST_CASE("project_backward matches central differences") {
  Camera cam;
  cam.width = 200;
  cam.height = 160;
  cam.fov_y_deg = 40.0;
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Vec3 p(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
           rng.uniform(0.5, 3.0));
    Vec2 g(rng.normal(), rng.normal());
    Vec3 analytic = cam.project_backward(p, g);
    for (int k = 0; k < 3; ++k) {
      Vec3 probe = p;
      double numeric = oracle::fd_central(&probe[k], 1e-6, [&] {
        return g.dot(cam.project(probe));
      });
      REQUIRE(std::abs(analytic[k] - numeric) < 1e-5);
    }
  }
}

TEST_CASE("world-to-camera transform composes rotation then translation") {
  Camera cam;
  cam.r_wc = quat_to_rot(quat_from_axis_angle(Vec3(0, 1, 0), 0.3));
  cam.t_wc = Vec3(0.1, -0.2, 0.5);
  Vec3 p(0.3, 0.4, -0.1);
  REQUIRE((cam.to_camera(p) - (cam.r_wc * p + cam.t_wc)).norm() == 0.0);
}

TEST_CASE("front camera looks at the origin from +z") {
  Camera cam = make_front_camera(64, 64, 30.0, 1.5);
  REQUIRE_NOTHROW(cam.validate());

  // The origin sits on the optical axis at depth = distance.
  Vec3 o_cam = cam.to_camera(Vec3::Zero());
  REQUIRE(o_cam.x() == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(o_cam.y() == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(o_cam.z() == Catch::Approx(1.5).epsilon(1e-12));
  REQUIRE((cam.project(o_cam) - Vec2(32, 32)).norm() < 1e-9);

  // World +y stays up.
  Vec3 above = cam.to_camera(Vec3(0, 0.1, 0));
  REQUIRE(above.y() > 0.0);

  // Rotation is orthonormal and right-handed.
  REQUIRE((cam.r_wc * cam.r_wc.transpose() - Mat3::Identity()).norm() < 1e-12);
  REQUIRE(cam.r_wc.determinant() == Catch::Approx(1.0).epsilon(1e-12));
}
