#pragma once

// Keyed random streams. Every stream is identified by (seed, repeat, pair,
// stage), so any cell of an experiment can be regenerated in isolation and
// in any order.

#include <cmath>
#include <cstdint>
#include <random>

#include "aggmarkov/core_model.hpp"

namespace aggmarkov {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct StreamKey {
  std::uint64_t seed = 0;
  std::uint64_t repeat = 0;
  std::uint64_t pair = 0;
  std::uint64_t stage = 0;

  std::uint64_t hash() const {
    std::uint64_t h = splitmix64(seed);
    h = splitmix64(h ^ repeat);
    h = splitmix64(h ^ (pair + 0x632be59bd9b4e019ULL));
    h = splitmix64(h ^ (stage + 0x8cb92ba72f3d8dd7ULL));
    return h;
  }
};

/// mt19937_64 seeded from a stream key. Uniforms are built from raw engine
/// bits so results do not depend on the standard library's distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  explicit Rng(const StreamKey& key) : engine_(key.hash()) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard exponential variate.
  double exponential() { return -std::log1p(-uniform()); }

  /// Draws an index with probability proportional to `weights` (which must
  /// have positive total).
  template <typename Derived>
  Eigen::Index categorical(const Eigen::DenseBase<Derived>& weights, double total) {
    const double u = uniform() * total;
    double acc = 0.0;
    Eigen::Index last_positive = 0;
    for (Eigen::Index k = 0; k < weights.size(); ++k) {
      const double w = weights(k);
      if (w <= 0.0) continue;
      acc += w;
      last_positive = k;
      if (u < acc) return k;
    }
    return last_positive;
  }

  /// Uniform point on the probability simplex (normalized exponentials).
  Vector simplex(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index k = 0; k < n; ++k) v[k] = exponential();
    return v / v.sum();
  }

  /// Independent uniforms normalized to sum to one.
  Vector normalized_uniform(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index k = 0; k < n; ++k) v[k] = uniform();
    const double s = v.sum();
    return s > 0.0 ? Vector(v / s) : Vector(Vector::Constant(n, 1.0 / static_cast<double>(n)));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace aggmarkov
