#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace splatrig {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double d) { return d * kPi / 180.0; }

/// Gradient of x -> ||x||, zero at the origin (matches central differences).
template <typename Derived>
auto safe_norm_grad(const Eigen::MatrixBase<Derived>& x) {
  using Plain = typename Derived::PlainObject;
  double n = x.norm();
  if (n < 1e-12) return Plain(Plain::Zero(x.rows(), x.cols()));
  return Plain(x / n);
}

/// Bad user input (files, configs, dimension mismatches). CLI exit code 1.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Failures during computation (I/O, missing data at runtime). CLI exit code 2.
struct RunError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values or other numerical breakdown. CLI exit code 3.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Deterministic seeded RNG with named substreams.
//
// All randomness in the project flows from one root seed; consumers derive
// independent substreams by name so adding a new consumer does not perturb
// the draws seen by existing ones.
// ---------------------------------------------------------------------------

namespace detail {
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9E3779B97f4A7C15ULL;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}
}  // namespace detail

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ^ 0xA3EC647659359ACDULL) {
    // warm up so small seeds diverge
    detail::splitmix64(state_);
    detail::splitmix64(state_);
  }

  Rng substream(std::string_view name) const {
    uint64_t s = state_;
    return Rng(detail::splitmix64(s) ^ detail::fnv1a(name));
  }

  uint64_t next_u64() { return detail::splitmix64(state_); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (no libstdc++ dependence, bitwise stable).
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
  }

  Vec3 normal3() {
    Vec3 v;
    v.x() = normal();
    v.y() = normal();
    v.z() = normal();
    return v;
  }

  int uniform_int(int n) {  // in [0, n)
    return static_cast<int>(next_u64() % static_cast<uint64_t>(n));
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// Chunked parallel-for. Work is split into fixed chunks regardless of thread
// count, and any reduction over the results must be done by the caller in
// chunk order so results are thread-count invariant.
// ---------------------------------------------------------------------------

inline int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Calls fn(begin, end) over disjoint subranges of [0, n).
template <typename Fn>
void parallel_for(int64_t n, int n_threads, Fn&& fn) {
  n_threads = resolve_thread_count(n_threads);
  if (n <= 0) return;
  if (n_threads <= 1 || n == 1) {
    fn(int64_t{0}, n);
    return;
  }
  int workers = static_cast<int>(std::min<int64_t>(n_threads, n));
  int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    int64_t b = w * chunk;
    int64_t e = std::min<int64_t>(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& t : pool) t.join();
}

// ---------------------------------------------------------------------------
// Dense row-major image buffer of doubles.
// ---------------------------------------------------------------------------

struct ImageBuf {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  ImageBuf() = default;
  ImageBuf(int w, int h, int c, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c = 0) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  Vec3 pixel3(int x, int y) const {
    size_t i = (static_cast<size_t>(y) * width + x) * channels;
    return Vec3(data[i], data[i + 1], data[i + 2]);
  }
  void set_pixel3(int x, int y, const Vec3& v) {
    size_t i = (static_cast<size_t>(y) * width + x) * channels;
    data[i] = v.x();
    data[i + 1] = v.y();
    data[i + 2] = v.z();
  }
  size_t size() const { return data.size(); }
  bool same_shape(const ImageBuf& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

}  // namespace splatrig
