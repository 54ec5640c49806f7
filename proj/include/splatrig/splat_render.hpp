#pragma once

#include "splatrig/camera.hpp"
#include "splatrig/core.hpp"
#include "splatrig/gaussian_rig.hpp"

namespace splatrig {

// ---------------------------------------------------------------------------
// Surfel renderer. Pixels cast unit rays through their centers; each splat is
// a flat Gaussian patch intersected in closed form; contributions are
// composited front-to-back ordered by (intersection depth, splat index).
// Tiling is purely a culling structure: per-pixel results are identical to
// intersecting every splat against every ray.
// ---------------------------------------------------------------------------

struct RenderSettings {
  double weight_cutoff = 1.0 / 255.0;      // drop contributions below this
  double early_stop_transmittance = 1e-4;  // stop compositing below this
  int tile_size = 16;
  int n_threads = 1;  // 0 = all hardware threads; output is identical
};

struct RenderBuffers {
  ImageBuf color;   // H x W x 3, composited + background
  ImageBuf depth;   // H x W, alpha-normalized mean camera-z, 0 where empty
  ImageBuf normal;  // H x W x 3, alpha-weighted sum of splat normals (camera frame)
  ImageBuf alpha;   // H x W, accumulated opacity

  RenderBuffers(int w, int h)
      : color(w, h, 3), depth(w, h, 1), normal(w, h, 3), alpha(w, h, 1) {}

  bool same_shape(const RenderBuffers& o) const {
    return color.same_shape(o.color) && depth.same_shape(o.depth) &&
           normal.same_shape(o.normal) && alpha.same_shape(o.alpha);
  }
};

/// Homogeneous plane matrix: maps (u, v, 1, 1) to the world-space point
/// mu + s_u t_u u + s_v t_v v.
inline Mat4 splat_plane(const WorldSplat& s) {
  Mat4 h = Mat4::Zero();
  h.block<3, 1>(0, 0) = s.scales[0] * s.rotation.col(0);
  h.block<3, 1>(0, 1) = s.scales[1] * s.rotation.col(1);
  h.block<3, 1>(0, 3) = s.center;
  h(3, 3) = 1.0;
  return h;
}

struct SplatHit {
  bool hit = false;
  double t = 0.0;
  double u = 0.0;
  double v = 0.0;
};

inline SplatHit intersect_splat(const Vec3& origin, const Vec3& dir,
                                const WorldSplat& s, double near_clip,
                                double far_clip) {
  SplatHit h;
  Vec3 tw = s.rotation.col(2);
  double denom = tw.dot(dir);
  if (std::abs(denom) < 1e-9) return h;
  double t = tw.dot(s.center - origin) / denom;
  if (t <= near_clip || t >= far_clip) return h;
  Vec3 q = origin + t * dir - s.center;
  h.hit = true;
  h.t = t;
  h.u = q.dot(s.rotation.col(0)) / s.scales[0];
  h.v = q.dot(s.rotation.col(1)) / s.scales[1];
  return h;
}

inline double splat_weight(double u, double v) {
  return std::exp(-0.5 * (u * u + v * v));
}

namespace render_detail {

// Splat expressed in the camera frame, with its composited color resolved.
struct CamSplat {
  Vec3 m;
  Vec3 tu, tv, tw;
  double su, sv, sigma;
  Vec3 color;
  int index;  // position in the input splat list
};

struct PixelHit {
  double t, u, v, w;
  int local;  // index into the tile's splat list
};

inline std::vector<CamSplat> to_camera(const std::vector<WorldSplat>& splats,
                                       const std::vector<Vec3>* colors,
                                       const Camera& cam) {
  if (colors && colors->size() != splats.size())
    throw ValidationError("per-splat color count mismatch");
  std::vector<CamSplat> out;
  out.reserve(splats.size());
  for (size_t i = 0; i < splats.size(); ++i) {
    const WorldSplat& s = splats[i];
    if (!s.valid) continue;
    if (!(s.scales[0] > 0.0) || !(s.scales[1] > 0.0))
      throw ValidationError("splat scales must be positive");
    CamSplat c;
    c.m = cam.to_camera(s.center);
    Mat3 r = cam.r_wc * s.rotation;
    c.tu = r.col(0);
    c.tv = r.col(1);
    c.tw = r.col(2);
    c.su = s.scales[0];
    c.sv = s.scales[1];
    c.sigma = s.opacity;
    c.color = colors ? (*colors)[i] : s.albedo;
    c.index = static_cast<int>(i);
    out.push_back(c);
  }
  return out;
}

// Conservative pixel-space bounding box of the splat footprint out to the
// weight-cutoff radius. Projects the corners of the patch's 3D bounding box;
// valid because perspective projection of a convex solid in front of the
// camera is the hull of its projected vertices. Returns false when the splat
// cannot contribute; full = true requests all tiles (box straddles the
// near plane).
inline bool splat_pixel_bounds(const CamSplat& s, const Camera& cam,
                               double cutoff, double& x0, double& x1,
                               double& y0, double& y1, bool& full) {
  full = false;
  double r = std::sqrt(std::max(0.0, -2.0 * std::log(cutoff))) * 1.01;
  Vec3 ext = r * (s.su * s.tu.cwiseAbs() + s.sv * s.tv.cwiseAbs());
  double zmax = s.m.z() + ext.z();
  if (zmax <= cam.near_clip) return false;  // patch entirely behind near plane
  double zmin = s.m.z() - ext.z();
  if (zmin <= cam.near_clip) {
    full = true;  // straddles the near plane; cull by tile is unsafe
    return true;
  }
  x0 = y0 = std::numeric_limits<double>::infinity();
  x1 = y1 = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < 8; ++k) {
    Vec3 corner = s.m + Vec3((k & 1) ? ext.x() : -ext.x(),
                             (k & 2) ? ext.y() : -ext.y(),
                             (k & 4) ? ext.z() : -ext.z());
    Vec2 px = cam.project(corner);
    x0 = std::min(x0, px.x());
    x1 = std::max(x1, px.x());
    y0 = std::min(y0, px.y());
    y1 = std::max(y1, px.y());
  }
  return x1 >= 0.0 && y1 >= 0.0 && x0 < cam.width && y0 < cam.height;
}

struct TileGrid {
  int tile, tx, ty;
  std::vector<std::vector<int>> lists;  // per tile: indices into cam splats

  TileGrid(const std::vector<CamSplat>& splats, const Camera& cam,
           const RenderSettings& cfg) {
    tile = cfg.tile_size;
    tx = (cam.width + tile - 1) / tile;
    ty = (cam.height + tile - 1) / tile;
    lists.resize(static_cast<size_t>(tx) * ty);
    for (size_t si = 0; si < splats.size(); ++si) {
      double x0, x1, y0, y1;
      bool full;
      if (!splat_pixel_bounds(splats[si], cam, cfg.weight_cutoff, x0, x1, y0,
                              y1, full))
        continue;
      int tx0 = 0, tx1 = tx - 1, ty0 = 0, ty1 = ty - 1;
      if (!full) {
        tx0 = std::max(0, static_cast<int>(std::floor((x0 - 1.0) / tile)));
        tx1 = std::min(tx - 1, static_cast<int>(std::floor((x1 + 1.0) / tile)));
        ty0 = std::max(0, static_cast<int>(std::floor((y0 - 1.0) / tile)));
        ty1 = std::min(ty - 1, static_cast<int>(std::floor((y1 + 1.0) / tile)));
      }
      for (int tyi = ty0; tyi <= ty1; ++tyi)
        for (int txi = tx0; txi <= tx1; ++txi)
          lists[static_cast<size_t>(tyi) * tx + txi].push_back(
              static_cast<int>(si));
    }
  }
};

/// Collects sorted in-cutoff hits for the ray through pixel (px, py) against
/// the given splat subset. Ordering: (t, splat index) ascending.
inline void gather_hits(const std::vector<CamSplat>& splats,
                        const std::vector<int>& subset, const Camera& cam,
                        const RenderSettings& cfg, const Vec3& dir,
                        std::vector<PixelHit>& hits) {
  hits.clear();
  for (size_t k = 0; k < subset.size(); ++k) {
    const CamSplat& s = splats[static_cast<size_t>(subset[k])];
    double denom = s.tw.dot(dir);
    if (std::abs(denom) < 1e-9) continue;
    double t = s.tw.dot(s.m) / denom;
    if (t <= cam.near_clip || t >= cam.far_clip) continue;
    Vec3 q = t * dir - s.m;
    double u = q.dot(s.tu) / s.su;
    double v = q.dot(s.tv) / s.sv;
    double w = splat_weight(u, v);
    if (w < cfg.weight_cutoff) continue;
    hits.push_back({t, u, v, w, static_cast<int>(k)});
  }
  std::sort(hits.begin(), hits.end(),
            [&](const PixelHit& a, const PixelHit& b) {
              if (a.t != b.t) return a.t < b.t;
              return splats[static_cast<size_t>(subset[static_cast<size_t>(
                         a.local)])].index <
                     splats[static_cast<size_t>(subset[static_cast<size_t>(
                         b.local)])].index;
            });
}

}  // namespace render_detail

inline RenderBuffers render_splats(const std::vector<WorldSplat>& splats,
                                   const Camera& cam, const Vec3& background,
                                   const RenderSettings& cfg = {},
                                   const std::vector<Vec3>* colors = nullptr) {
  using namespace render_detail;
  cam.validate();
  RenderBuffers buf(cam.width, cam.height);
  std::vector<CamSplat> cs = to_camera(splats, colors, cam);
  TileGrid grid(cs, cam, cfg);

  int n_threads = resolve_thread_count(cfg.n_threads);
  int64_t n_tiles = static_cast<int64_t>(grid.lists.size());
  parallel_for(n_tiles, n_threads, [&](int64_t t0, int64_t t1) {
    std::vector<PixelHit> hits;
    for (int64_t ti = t0; ti < t1; ++ti) {
      const std::vector<int>& subset = grid.lists[static_cast<size_t>(ti)];
      int px0 = static_cast<int>(ti % grid.tx) * grid.tile;
      int py0 = static_cast<int>(ti / grid.tx) * grid.tile;
      int px1 = std::min(cam.width, px0 + grid.tile);
      int py1 = std::min(cam.height, py0 + grid.tile);
      for (int py = py0; py < py1; ++py) {
        for (int px = px0; px < px1; ++px) {
          Vec3 dir = cam.pixel_ray(px, py);
          gather_hits(cs, subset, cam, cfg, dir, hits);
          double trans = 1.0;
          Vec3 c_acc = Vec3::Zero(), n_acc = Vec3::Zero();
          double d_acc = 0.0;
          for (const PixelHit& h : hits) {
            if (trans < cfg.early_stop_transmittance) break;
            const CamSplat& s =
                cs[static_cast<size_t>(subset[static_cast<size_t>(h.local)])];
            double a = s.sigma * h.w;
            double contrib = a * trans;
            c_acc += contrib * s.color;
            n_acc += contrib * s.tw;
            d_acc += contrib * (h.t * dir.z());
            trans *= 1.0 - a;
          }
          double alpha = 1.0 - trans;
          Vec3 c_out = c_acc + trans * background;
          buf.color.set_pixel3(px, py, c_out);
          buf.normal.set_pixel3(px, py, n_acc);
          buf.alpha.at(px, py, 0) = alpha;
          buf.depth.at(px, py, 0) =
              alpha > cfg.early_stop_transmittance ? d_acc / alpha : 0.0;
        }
      }
    }
  });
  return buf;
}

/// Gradients of a scalar loss w.r.t. splat fields given upstream gradients on
/// all four buffers. Per-splat color gradients land in `grad_colors`; when
/// the forward pass shaded from albedo directly, chain them into albedo.
/// The compositing order is treated as locally constant.
inline void render_splats_backward(const std::vector<WorldSplat>& splats,
                                   const Camera& cam, const Vec3& background,
                                   const RenderBuffers& upstream,
                                   std::vector<WorldSplatGrad>& grad_splats,
                                   std::vector<Vec3>& grad_colors,
                                   const RenderSettings& cfg = {},
                                   const std::vector<Vec3>* colors = nullptr) {
  using namespace render_detail;
  cam.validate();
  if (upstream.color.width != cam.width || upstream.color.height != cam.height)
    throw ValidationError("upstream gradient buffer shape mismatch");

  grad_splats.assign(splats.size(), WorldSplatGrad());
  grad_colors.assign(splats.size(), Vec3::Zero());

  std::vector<CamSplat> cs = to_camera(splats, colors, cam);
  TileGrid grid(cs, cam, cfg);

  struct LocalGrad {
    Vec3 m = Vec3::Zero(), tu = Vec3::Zero(), tv = Vec3::Zero(),
         tw = Vec3::Zero();
    double su = 0.0, sv = 0.0, sigma = 0.0;
    Vec3 color = Vec3::Zero();
  };
  // Per-tile accumulators, merged in tile order afterward so the result does
  // not depend on the thread partition.
  std::vector<std::vector<LocalGrad>> tile_grads(grid.lists.size());

  int n_threads = resolve_thread_count(cfg.n_threads);
  int64_t n_tiles = static_cast<int64_t>(grid.lists.size());
  parallel_for(n_tiles, n_threads, [&](int64_t t0, int64_t t1) {
    std::vector<PixelHit> hits;
    std::vector<double> trans_at;  // transmittance in front of each hit
    for (int64_t ti = t0; ti < t1; ++ti) {
      const std::vector<int>& subset = grid.lists[static_cast<size_t>(ti)];
      if (subset.empty()) continue;
      std::vector<LocalGrad>& local = tile_grads[static_cast<size_t>(ti)];
      local.assign(subset.size(), LocalGrad());
      int px0 = static_cast<int>(ti % grid.tx) * grid.tile;
      int py0 = static_cast<int>(ti / grid.tx) * grid.tile;
      int px1 = std::min(cam.width, px0 + grid.tile);
      int py1 = std::min(cam.height, py0 + grid.tile);
      for (int py = py0; py < py1; ++py) {
        for (int px = px0; px < px1; ++px) {
          Vec3 dir = cam.pixel_ray(px, py);
          gather_hits(cs, subset, cam, cfg, dir, hits);
          if (hits.empty()) continue;

          // Replay the forward composite to recover T_i and the accumulators.
          trans_at.clear();
          double trans = 1.0, d_acc = 0.0;
          size_t n_used = 0;
          for (const PixelHit& h : hits) {
            if (trans < cfg.early_stop_transmittance) break;
            trans_at.push_back(trans);
            const CamSplat& s =
                cs[static_cast<size_t>(subset[static_cast<size_t>(h.local)])];
            double a = s.sigma * h.w;
            d_acc += a * trans * (h.t * dir.z());
            trans *= 1.0 - a;
            ++n_used;
          }
          double alpha = 1.0 - trans;

          Vec3 g_color = upstream.color.pixel3(px, py);
          Vec3 g_normal = upstream.normal.pixel3(px, py);
          double g_alpha_buf = upstream.alpha.at(px, py, 0);
          double g_depth = upstream.depth.at(px, py, 0);

          bool depth_live = alpha > cfg.early_stop_transmittance;
          double g_dsum = depth_live ? g_depth / alpha : 0.0;
          // alpha feeds the alpha buffer and the depth normalization.
          double g_alpha_tot =
              g_alpha_buf -
              (depth_live ? g_depth * d_acc / (alpha * alpha) : 0.0);
          double g_tfin = g_color.dot(background) - g_alpha_tot;

          // Reverse walk over the composited prefix.
          double suffix = g_tfin * trans;
          for (size_t k = n_used; k-- > 0;) {
            const PixelHit& h = hits[k];
            const CamSplat& s =
                cs[static_cast<size_t>(subset[static_cast<size_t>(h.local)])];
            LocalGrad& lg = local[static_cast<size_t>(h.local)];
            double t_i = trans_at[k];
            double a = s.sigma * h.w;
            double contrib = a * t_i;
            double z = h.t * dir.z();

            // The alpha/depth-normalization dependence on accumulated alpha
            // is routed once, through T_fin = 1 - alpha (g_tfin above).
            double v_i = g_color.dot(s.color) + g_normal.dot(s.tw) +
                         g_dsum * z;
            double g_a = t_i * v_i - suffix / (1.0 - a);
            suffix += contrib * v_i;

            lg.color += contrib * g_color;
            lg.tw += contrib * g_normal;
            lg.sigma += h.w * g_a;
            double g_w = s.sigma * g_a;
            double g_u = -h.u * h.w * g_w;
            double g_v = -h.v * h.w * g_w;

            // z = t * dir.z and (u, v) also move with t.
            double g_t = contrib * g_dsum * dir.z() +
                         g_u * dir.dot(s.tu) / s.su +
                         g_v * dir.dot(s.tv) / s.sv;

            Vec3 p = h.t * dir;
            Vec3 q = p - s.m;
            double denom = s.tw.dot(dir);
            lg.m += g_t * s.tw / denom - g_u * s.tu / s.su - g_v * s.tv / s.sv;
            lg.tu += g_u * q / s.su;
            lg.tv += g_v * q / s.sv;
            lg.tw += g_t * (s.m - p) / denom;
            lg.su += -g_u * h.u / s.su;
            lg.sv += -g_v * h.v / s.sv;
          }
        }
      }
    }
  });

  // Deterministic reduction: tiles in index order, camera frame -> world.
  for (size_t ti = 0; ti < grid.lists.size(); ++ti) {
    const std::vector<int>& subset = grid.lists[ti];
    const std::vector<LocalGrad>& local = tile_grads[ti];
    if (local.empty()) continue;
    for (size_t k = 0; k < subset.size(); ++k) {
      const LocalGrad& lg = local[k];
      const CamSplat& s = cs[static_cast<size_t>(subset[k])];
      WorldSplatGrad& g = grad_splats[static_cast<size_t>(s.index)];
      g.center += cam.r_wc.transpose() * lg.m;
      g.rotation.col(0) += cam.r_wc.transpose() * lg.tu;
      g.rotation.col(1) += cam.r_wc.transpose() * lg.tv;
      g.rotation.col(2) += cam.r_wc.transpose() * lg.tw;
      g.scales[0] += lg.su;
      g.scales[1] += lg.sv;
      g.opacity += lg.sigma;
      grad_colors[static_cast<size_t>(s.index)] += lg.color;
    }
  }
}

}  // namespace splatrig
