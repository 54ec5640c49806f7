#pragma once

#include "splatrig/core.hpp"

#include <atomic>
#include <fstream>

namespace splatrig {

// ---------------------------------------------------------------------------
// Lambertian shading from real spherical harmonics, bands 0-2: a splat's
// color is its albedo times the SH irradiance evaluated at its normal. The
// 9x3 coefficient table comes from an affine PCA prior: w = mean + B * code,
// with B laid out as 27 x D (27 = 9 basis functions x 3 channels,
// channel-major: rows [0..8] red, [9..17] green, [18..26] blue).
// ---------------------------------------------------------------------------

inline constexpr double kShC0 = 0.28209479177387814;  // 1 / (2 sqrt(pi))
inline constexpr double kShC1 = 0.4886025119029199;   // sqrt(3 / (4 pi))
inline constexpr double kShC2a = 1.0925484305920792;  // sqrt(15 / (4 pi))
inline constexpr double kShC2b = 0.31539156525252005; // sqrt(5 / (16 pi))
inline constexpr double kShC2c = 0.5462742152960396;  // sqrt(15 / (16 pi))

/// Counts silently normalized non-unit inputs across all threads.
inline std::atomic<uint64_t>& sh_nonunit_warnings() {
  static std::atomic<uint64_t> counter{0};
  return counter;
}

using ShVec = Eigen::Matrix<double, 9, 1>;
using ShCoeffs = Eigen::Matrix<double, 9, 3>;  // column = channel

/// Real SH basis, graphics sign convention, order
/// [Y00, Y1-1, Y10, Y11, Y2-2, Y2-1, Y20, Y21, Y22].
inline ShVec sh_basis(const Vec3& n_in) {
  double norm = n_in.norm();
  if (std::abs(norm - 1.0) > 1e-4) sh_nonunit_warnings()++;
  if (norm < 1e-12) throw NumericalError("sh basis input has zero norm");
  Vec3 n = n_in / norm;
  double x = n.x(), y = n.y(), z = n.z();
  ShVec b;
  b[0] = kShC0;
  b[1] = -kShC1 * y;
  b[2] = kShC1 * z;
  b[3] = -kShC1 * x;
  b[4] = kShC2a * x * y;
  b[5] = -kShC2a * y * z;
  b[6] = kShC2b * (3.0 * z * z - 1.0);
  b[7] = -kShC2a * x * z;
  b[8] = kShC2c * (x * x - y * y);
  return b;
}

/// dL/d(n_in) given dL/d(basis); includes the normalization Jacobian.
inline Vec3 sh_basis_backward(const Vec3& n_in, const ShVec& grad_b) {
  double norm = n_in.norm();
  Vec3 n = n_in / norm;
  double x = n.x(), y = n.y(), z = n.z();
  Vec3 g_unit(
      -kShC1 * grad_b[3] + kShC2a * y * grad_b[4] - kShC2a * z * grad_b[7] +
          2.0 * kShC2c * x * grad_b[8],
      -kShC1 * grad_b[1] + kShC2a * x * grad_b[4] - kShC2a * z * grad_b[5] -
          2.0 * kShC2c * y * grad_b[8],
      kShC1 * grad_b[2] - kShC2a * y * grad_b[5] + 6.0 * kShC2b * z * grad_b[6] -
          kShC2a * x * grad_b[7]);
  return (g_unit - n * n.dot(g_unit)) / norm;
}

struct LightingPrior {
  VecX mean;   // length 27
  MatX basis;  // 27 x D

  int dim() const { return static_cast<int>(basis.cols()); }

  void validate() const {
    if (mean.size() != 27 || basis.rows() != 27)
      throw ValidationError("lighting prior must have 27 coefficient rows");
    if (basis.cols() < 1)
      throw ValidationError("lighting prior needs at least one component");
  }
};

inline ShCoeffs lighting_coeffs(const LightingPrior& prior, const VecX& code) {
  if (code.size() != prior.dim())
    throw ValidationError("lighting code length does not match prior");
  VecX flat = prior.mean + prior.basis * code;
  ShCoeffs w;
  for (int ch = 0; ch < 3; ++ch)
    for (int k = 0; k < 9; ++k) w(k, ch) = flat[9 * ch + k];
  return w;
}

inline VecX lighting_coeffs_backward(const LightingPrior& prior,
                                     const ShCoeffs& grad_w) {
  VecX flat(27);
  for (int ch = 0; ch < 3; ++ch)
    for (int k = 0; k < 9; ++k) flat[9 * ch + k] = grad_w(k, ch);
  return prior.basis.transpose() * flat;
}

/// c_j = max(0, a_j * sum_k w_kj * Y_k(n)); the clamp blocks gradients.
inline Vec3 shade(const Vec3& albedo, const Vec3& normal, const ShCoeffs& w) {
  ShVec b = sh_basis(normal);
  Vec3 irr = w.transpose() * b;
  return (albedo.array() * irr.array()).max(0.0);
}

inline void shade_backward(const Vec3& albedo, const Vec3& normal,
                           const ShCoeffs& w, const Vec3& grad_color,
                           Vec3& grad_albedo, Vec3& grad_normal,
                           ShCoeffs& grad_w) {
  ShVec b = sh_basis(normal);
  Vec3 irr = w.transpose() * b;
  Vec3 g = grad_color;
  for (int j = 0; j < 3; ++j)
    if (albedo[j] * irr[j] < 0.0) g[j] = 0.0;
  grad_albedo = g.cwiseProduct(irr);
  Vec3 g_irr = g.cwiseProduct(albedo);
  grad_w = b * g_irr.transpose();
  grad_normal = sh_basis_backward(normal, w * g_irr);
}

/// Beta(0.5, 0.5) negative log-likelihood; pulls opacities toward 0 or 1.
/// Input is clamped to [1e-4, 1 - 1e-4]; the clamp zeroes the gradient.
inline double beta_nll(double sigma) {
  double s = std::min(1.0 - 1e-4, std::max(1e-4, sigma));
  return std::log(kPi) + 0.5 * std::log(s) + 0.5 * std::log(1.0 - s);
}

inline double beta_nll_backward(double sigma) {
  if (sigma < 1e-4 || sigma > 1.0 - 1e-4) return 0.0;
  return 0.5 / sigma - 0.5 / (1.0 - sigma);
}

/// Synthetic stand-in lighting prior: warm ambient mean plus weak band-1
/// directional components; basis columns excite canonical SH directions.
inline LightingPrior make_default_prior() {
  LightingPrior p;
  p.mean = VecX::Zero(27);
  Vec3 ambient(1.05, 1.0, 0.92);  // slightly warm DC
  for (int ch = 0; ch < 3; ++ch) {
    p.mean[9 * ch + 0] = ambient[ch] / kShC0 * 0.85;
    p.mean[9 * ch + 2] = 0.1;  // weak light from above
    p.mean[9 * ch + 3] = -0.05;
  }
  const int d = 9;
  p.basis = MatX::Zero(27, d);
  // One column per SH function, applied to all channels jointly.
  for (int k = 0; k < d; ++k)
    for (int ch = 0; ch < 3; ++ch) p.basis(9 * ch + k, k) = 0.25;
  return p;
}

// ---------------------------------------------------------------------------
// Prior file: "lighting_prior <D>" header line, 27 mean values, then the
// basis as D rows of 27 values (one principal component per row). In memory
// the basis is kept 27xD so that w = mean + basis * code type-checks.
// ---------------------------------------------------------------------------

inline void save_prior(const std::string& path, const LightingPrior& prior) {
  prior.validate();
  std::ofstream f(path);
  if (!f) throw RunError("cannot write prior file: " + path);
  f.precision(17);
  f << "lighting_prior " << prior.dim() << "\n";
  for (int i = 0; i < 27; ++i) f << prior.mean[i] << (i + 1 < 27 ? ' ' : '\n');
  for (int j = 0; j < prior.dim(); ++j) {
    for (int i = 0; i < 27; ++i)
      f << prior.basis(i, j) << (i + 1 < 27 ? ' ' : '\n');
  }
  if (!f) throw RunError("write failed: " + path);
}

inline LightingPrior load_prior(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw RunError("cannot open prior file: " + path);
  std::string tag;
  int d = 0;
  f >> tag >> d;
  if (tag != "lighting_prior" || d < 1)
    throw ValidationError("bad prior file header: " + path);
  LightingPrior p;
  p.mean = VecX::Zero(27);
  p.basis = MatX::Zero(27, d);
  for (int i = 0; i < 27; ++i) f >> p.mean[i];
  for (int j = 0; j < d; ++j)
    for (int i = 0; i < 27; ++i) f >> p.basis(i, j);
  if (!f) throw ValidationError("truncated prior file: " + path);
  p.validate();
  return p;
}

}  // namespace splatrig
