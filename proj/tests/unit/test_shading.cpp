#include <catch_amalgamated.hpp>

#include <splatrig/core.hpp>
#include <splatrig/shading.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "support/oracles.hpp"

using namespace splatrig;

TEST_CASE("sh basis constants at canonical directions") {
  // DC term is direction-independent.
  REQUIRE(sh_basis(Vec3(0, 0, 1))[0] ==
          Catch::Approx(0.28209479177387814).margin(1e-9));
  REQUIRE(sh_basis(Vec3(1, 0, 0))[0] == sh_basis(Vec3(0, 1, 0))[0]);

  // +z direction: only Y10 and the zonal band-2 term survive.
  ShVec b = sh_basis(Vec3(0, 0, 1));
  REQUIRE(b[1] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(b[2] == Catch::Approx(0.4886025119029199).margin(1e-9));
  REQUIRE(b[3] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(b[4] == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(b[6] == Catch::Approx(0.6307831305050401).margin(1e-9));
  REQUIRE(b[8] == Catch::Approx(0.0).margin(1e-12));

  // +x direction.
  b = sh_basis(Vec3(1, 0, 0));
  REQUIRE(b[3] == Catch::Approx(-0.4886025119029199).margin(1e-9));
  REQUIRE(b[6] == Catch::Approx(-0.31539156525252005).margin(1e-9));
  REQUIRE(b[8] == Catch::Approx(0.5462742152960396).margin(1e-9));
}

TEST_CASE("sh basis warns on non-unit input and normalizes") {
  uint64_t before = sh_nonunit_warnings().load();
  ShVec a = sh_basis(Vec3(0, 0, 2.0));
  REQUIRE(sh_nonunit_warnings().load() == before + 1);
  ShVec u = sh_basis(Vec3(0, 0, 1.0));
  REQUIRE((a - u).norm() < 1e-15);
  REQUIRE(sh_nonunit_warnings().load() == before + 1);  // unit input, no bump
  REQUIRE_THROWS_AS(sh_basis(Vec3::Zero()), NumericalError);
}

TEST_CASE("DC-normalized white light reproduces albedo") {
  ShCoeffs w = ShCoeffs::Zero();
  for (int ch = 0; ch < 3; ++ch) w(0, ch) = 1.0 / kShC0;
  Vec3 albedo(0.25, 0.5, 0.75);
  for (const Vec3& n :
       {Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(0.6, -0.48, 0.64).normalized()}) {
    Vec3 c = shade(albedo, n, w);
    REQUIRE(std::abs(c.x() - albedo.x()) <= 1e-15);
    REQUIRE(std::abs(c.y() - albedo.y()) <= 1e-15);
    REQUIRE(std::abs(c.z() - albedo.z()) <= 1e-15);
  }
}

TEST_CASE("shading is linear in albedo and coefficients before the clamp") {
  Rng rng(61);
  ShCoeffs w;
  for (int k = 0; k < 9; ++k)
    for (int ch = 0; ch < 3; ++ch) w(k, ch) = 0.2 * rng.normal();
  for (int ch = 0; ch < 3; ++ch) w(0, ch) += 2.0;  // keep irradiance positive
  Vec3 n = rng.normal3().normalized();
  Vec3 albedo(0.3, 0.6, 0.9);

  Vec3 base = shade(albedo, n, w);
  REQUIRE((shade(2.0 * albedo, n, w) - 2.0 * base).norm() < 1e-12);
  ShCoeffs w2 = 2.0 * w;
  REQUIRE((shade(albedo, n, w2) - 2.0 * base).norm() < 1e-12);
}

TEST_CASE("negative irradiance clamps to zero with zero gradient") {
  ShCoeffs w = ShCoeffs::Zero();
  for (int ch = 0; ch < 3; ++ch) w(0, ch) = -5.0;  // negative everywhere
  Vec3 albedo(0.5, 0.5, 0.5);
  Vec3 n(0, 0, 1);
  REQUIRE(shade(albedo, n, w).norm() == 0.0);

  Vec3 ga, gn;
  ShCoeffs gw;
  shade_backward(albedo, n, w, Vec3(1, 1, 1), ga, gn, gw);
  REQUIRE(ga.norm() == 0.0);
  REQUIRE(gn.norm() == 0.0);
  REQUIRE(gw.norm() == 0.0);
}

TEST_CASE("lighting coefficients reshape channel-major and are affine") {
  LightingPrior prior;
  prior.mean = VecX(27);
  for (int ch = 0; ch < 3; ++ch)
    for (int k = 0; k < 9; ++k) prior.mean[9 * ch + k] = 100.0 * ch + k;
  prior.basis = MatX::Zero(27, 2);
  prior.basis(0, 0) = 1.0;   // channel 0, Y00
  prior.basis(26, 1) = 2.0;  // channel 2, Y22
  prior.validate();

  ShCoeffs w0 = lighting_coeffs(prior, VecX::Zero(2));
  for (int ch = 0; ch < 3; ++ch)
    for (int k = 0; k < 9; ++k)
      REQUIRE(w0(k, ch) == 100.0 * ch + k);

  VecX code(2);
  code << 3.0, -1.0;
  ShCoeffs w = lighting_coeffs(prior, code);
  REQUIRE(w(0, 0) == w0(0, 0) + 3.0);
  REQUIRE(w(8, 2) == w0(8, 2) - 2.0);

  REQUIRE_THROWS_AS(lighting_coeffs(prior, VecX::Zero(3)), ValidationError);

  // Backward is the exact adjoint of the linear part.
  Rng rng(62);
  ShCoeffs gw;
  for (int k = 0; k < 9; ++k)
    for (int ch = 0; ch < 3; ++ch) gw(k, ch) = rng.normal();
  VecX g_code = lighting_coeffs_backward(prior, gw);
  // <gw, basis * e_i> == g_code[i]
  for (int i = 0; i < 2; ++i) {
    VecX e = VecX::Zero(2);
    e[i] = 1.0;
    ShCoeffs delta = lighting_coeffs(prior, e);
    double lhs = 0.0;
    for (int k = 0; k < 9; ++k)
      for (int ch = 0; ch < 3; ++ch)
        lhs += gw(k, ch) * (delta(k, ch) - w0(k, ch));
    REQUIRE(lhs == Catch::Approx(g_code[i]).epsilon(1e-12));
  }
}

TEST_CASE("shade_backward matches central differences") {
  Rng rng(63);
  for (int trial = 0; trial < 15; ++trial) {
    ShCoeffs w;
    for (int k = 0; k < 9; ++k)
      for (int ch = 0; ch < 3; ++ch) w(k, ch) = 0.3 * rng.normal();
    for (int ch = 0; ch < 3; ++ch) w(0, ch) += 3.0;  // stay off the clamp
    Vec3 albedo(rng.uniform(0.2, 0.9), rng.uniform(0.2, 0.9),
                rng.uniform(0.2, 0.9));
    Vec3 n = rng.normal3();
    if (n.norm() < 0.3) n = Vec3(0, 0, 1.2);  // non-unit on purpose
    Vec3 gc = rng.normal3();

    Vec3 ga, gn;
    ShCoeffs gw;
    shade_backward(albedo, n, w, gc, ga, gn, gw);

    auto loss = [&](const Vec3& a, const Vec3& nn, const ShCoeffs& ww) {
      return gc.dot(shade(a, nn, ww));
    };
    const double step = 1e-6;
    for (int k = 0; k < 3; ++k) {
      Vec3 probe = albedo;
      double numeric = oracle::fd_central(&probe[k], step,
                                          [&] { return loss(probe, n, w); });
      REQUIRE(oracle::rel_err(ga[k], numeric) < 1e-5);

      probe = n;
      numeric = oracle::fd_central(&probe[k], step,
                                   [&] { return loss(albedo, probe, w); });
      REQUIRE(oracle::rel_err(gn[k], numeric, 1e-4) < 1e-4);
    }
    for (int k = 0; k < 9; ++k)
      for (int ch = 0; ch < 3; ++ch) {
        ShCoeffs probe = w;
        double numeric = oracle::fd_central(&probe(k, ch), step, [&] {
          return loss(albedo, n, probe);
        });
        REQUIRE(oracle::rel_err(gw(k, ch), numeric, 1e-5) < 1e-4);
      }
  }
}

TEST_CASE("opacity prior peaks at one half and clamps at the edges") {
  // Beta(0.5, 0.5): NLL at the midpoint is log(pi / 2).
  REQUIRE(beta_nll(0.5) == Catch::Approx(std::log(kPi / 2.0)).margin(1e-9));
  // Extremes clamp to finite values with zero gradient.
  REQUIRE(std::isfinite(beta_nll(0.0)));
  REQUIRE(std::isfinite(beta_nll(1.0)));
  REQUIRE(beta_nll(0.0) == beta_nll(1e-5));
  REQUIRE(beta_nll_backward(0.0) == 0.0);
  REQUIRE(beta_nll_backward(1.0) == 0.0);
  // Midpoint is the maximum: NLL decreases toward both ends.
  REQUIRE(beta_nll(0.1) < beta_nll(0.5));
  REQUIRE(beta_nll(0.9) < beta_nll(0.5));
  REQUIRE(beta_nll_backward(0.5) == Catch::Approx(0.0).margin(1e-12));

  // Interior gradient matches finite differences.
  for (double s : {0.08, 0.3, 0.7, 0.93}) {
    double probe = s;
    double numeric =
        oracle::fd_central(&probe, 1e-7, [&] { return beta_nll(probe); });
    REQUIRE(oracle::rel_err(beta_nll_backward(s), numeric) < 1e-6);
  }
}

TEST_CASE("default prior validates and shades plausibly") {
  LightingPrior prior = make_default_prior();
  REQUIRE_NOTHROW(prior.validate());
  REQUIRE(prior.dim() == 9);
  ShCoeffs w = lighting_coeffs(prior, VecX::Zero(prior.dim()));
  Vec3 c = shade(Vec3(0.8, 0.6, 0.5), Vec3(0, 0, 1), w);
  REQUIRE(c.minCoeff() > 0.0);
  REQUIRE(c.maxCoeff() < 2.0);
}

TEST_CASE("prior file roundtrip preserves values and layout") {
  LightingPrior prior;
  prior.mean = VecX(27);
  Rng rng(64);
  for (int i = 0; i < 27; ++i) prior.mean[i] = rng.normal();
  prior.basis = MatX(27, 4);
  for (int r = 0; r < 27; ++r)
    for (int c = 0; c < 4; ++c) prior.basis(r, c) = rng.normal();

  std::string path = "test_prior_tmp.txt";
  save_prior(path, prior);
  LightingPrior loaded = load_prior(path);
  REQUIRE(loaded.mean.size() == 27);
  REQUIRE(loaded.basis.rows() == 27);
  REQUIRE(loaded.basis.cols() == 4);
  REQUIRE((loaded.mean - prior.mean).norm() == 0.0);
  REQUIRE((loaded.basis - prior.basis).norm() == 0.0);

  // On disk: header, 27 mean floats, then one row of 27 values per
  // component (the in-memory layout transposed).
  std::ifstream in(path);
  std::string tag;
  int dim = 0;
  in >> tag >> dim;
  REQUIRE(tag == "lighting_prior");
  REQUIRE(dim == 4);
  for (int i = 0; i < 27; ++i) {
    double v;
    in >> v;
    REQUIRE(v == prior.mean[i]);
  }
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 27; ++c) {
      double v;
      in >> v;
      REQUIRE(v == prior.basis(c, r));
    }
  std::remove(path.c_str());

  REQUIRE_THROWS_AS(load_prior("does_not_exist_prior.txt"), RunError);
}
