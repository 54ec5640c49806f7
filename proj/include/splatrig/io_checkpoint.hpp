#pragma once

#include "splatrig/adam.hpp"
#include "splatrig/blendshape.hpp"
#include "splatrig/core.hpp"
#include "splatrig/gaussian_rig.hpp"

#include <fstream>
#include <map>

namespace splatrig {

// ---------------------------------------------------------------------------
// Fit checkpoint, little-endian binary:
//   magic "SPLRIG01"
//   u32 version (=1), u64 iteration, u64 seed
//   u32 n_prototypes, then per prototype: i32 parent_face + 13 float32
//     (offset xyz, rotation wxyz, log-scale uv, opacity logit, albedo rgb)
//   f64 vector beta (u32 length prefix)
//   u32 n_frames, per frame: f64 vector psi, 11 f64 pose
//     (rotation wxyz, translation xyz, neck rotation wxyz)
//   f64 vector lighting code
//   u32 n_moment_groups, per group: u32 name length + name bytes,
//     u64 step count, f64 vector m, f64 vector v
// Prototype parameters are stored in float32; everything else in float64.
// ---------------------------------------------------------------------------

struct Checkpoint {
  std::vector<GaussianPrototype> prototypes;
  VecX beta;
  std::vector<VecX> psi;
  std::vector<Pose> poses;
  VecX lighting;
  std::map<std::string, AdamState> moments;
  int64_t iteration = 0;
  uint64_t seed = 0;
};

namespace ckpt_detail {

template <typename T>
void put(std::ostream& f, T v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

inline void put_vec(std::ostream& f, const VecX& v) {
  put<uint32_t>(f, static_cast<uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) put<double>(f, v[i]);
}

inline VecX get_vec(std::istream& f) {
  uint32_t n = get<uint32_t>(f);
  VecX v(n);
  for (uint32_t i = 0; i < n; ++i) v[i] = get<double>(f);
  return v;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  using namespace ckpt_detail;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RunError("cannot write " + path);
  f.write("SPLRIG01", 8);
  put<uint32_t>(f, 1);
  put<uint64_t>(f, static_cast<uint64_t>(c.iteration));
  put<uint64_t>(f, c.seed);

  put<uint32_t>(f, static_cast<uint32_t>(c.prototypes.size()));
  for (const auto& p : c.prototypes) {
    put<int32_t>(f, p.parent_face);
    float vals[13] = {
        static_cast<float>(p.offset.x()),    static_cast<float>(p.offset.y()),
        static_cast<float>(p.offset.z()),    static_cast<float>(p.rotation[0]),
        static_cast<float>(p.rotation[1]),   static_cast<float>(p.rotation[2]),
        static_cast<float>(p.rotation[3]),   static_cast<float>(p.log_scale[0]),
        static_cast<float>(p.log_scale[1]),
        static_cast<float>(p.opacity_logit), static_cast<float>(p.albedo.x()),
        static_cast<float>(p.albedo.y()),    static_cast<float>(p.albedo.z())};
    f.write(reinterpret_cast<const char*>(vals), sizeof(vals));
  }

  put_vec(f, c.beta);
  if (c.psi.size() != c.poses.size())
    throw ValidationError("checkpoint frame counts inconsistent");
  put<uint32_t>(f, static_cast<uint32_t>(c.psi.size()));
  for (size_t i = 0; i < c.psi.size(); ++i) {
    put_vec(f, c.psi[i]);
    const Pose& p = c.poses[i];
    for (int k = 0; k < 4; ++k) put<double>(f, p.rotation[k]);
    for (int k = 0; k < 3; ++k) put<double>(f, p.translation[k]);
    for (int k = 0; k < 4; ++k) put<double>(f, p.neck_rotation[k]);
  }
  put_vec(f, c.lighting);

  put<uint32_t>(f, static_cast<uint32_t>(c.moments.size()));
  for (const auto& [name, st] : c.moments) {
    put<uint32_t>(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<uint64_t>(f, static_cast<uint64_t>(st.t));
    put_vec(f, st.m);
    put_vec(f, st.v);
  }
  if (!f) throw RunError("checkpoint write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RunError("cannot read " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::string(magic, 8) != "SPLRIG01")
    throw ValidationError(path + ": not a checkpoint file (bad magic)");
  uint32_t version = get<uint32_t>(f);
  if (version != 1)
    throw ValidationError(path + ": unsupported checkpoint version " +
                          std::to_string(version));
  Checkpoint c;
  c.iteration = static_cast<int64_t>(get<uint64_t>(f));
  c.seed = get<uint64_t>(f);

  uint32_t n_protos = get<uint32_t>(f);
  c.prototypes.resize(n_protos);
  for (auto& p : c.prototypes) {
    p.parent_face = get<int32_t>(f);
    float vals[13];
    f.read(reinterpret_cast<char*>(vals), sizeof(vals));
    p.offset = Vec3(vals[0], vals[1], vals[2]);
    p.rotation = Vec4(vals[3], vals[4], vals[5], vals[6]);
    p.log_scale = Vec2(vals[7], vals[8]);
    p.opacity_logit = vals[9];
    p.albedo = Vec3(vals[10], vals[11], vals[12]);
  }

  c.beta = get_vec(f);
  uint32_t n_frames = get<uint32_t>(f);
  c.psi.resize(n_frames);
  c.poses.resize(n_frames);
  for (uint32_t i = 0; i < n_frames; ++i) {
    c.psi[i] = get_vec(f);
    for (int k = 0; k < 4; ++k) c.poses[i].rotation[k] = get<double>(f);
    for (int k = 0; k < 3; ++k) c.poses[i].translation[k] = get<double>(f);
    for (int k = 0; k < 4; ++k) c.poses[i].neck_rotation[k] = get<double>(f);
  }
  c.lighting = get_vec(f);

  uint32_t n_groups = get<uint32_t>(f);
  for (uint32_t g = 0; g < n_groups; ++g) {
    uint32_t len = get<uint32_t>(f);
    std::string name(len, '\0');
    f.read(name.data(), len);
    AdamState st;
    st.t = static_cast<int64_t>(get<uint64_t>(f));
    st.m = get_vec(f);
    st.v = get_vec(f);
    c.moments[name] = std::move(st);
  }
  if (!f) throw ValidationError(path + ": truncated checkpoint");
  return c;
}

}  // namespace splatrig
