#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "linalg.hpp"

namespace sloc {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) {
  return mix64(h ^ (mix64(v) + 0x632be59bd9b4e019ULL + (h << 6) + (h >> 2)));
}

// Seed of run `index` in stream `stream` of an experiment seeded by `base`.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index, std::uint64_t stream = 0) {
  return hash_combine(hash_combine(mix64(base), stream), index);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

inline double unit_open(std::uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// Standard normal addressed by a counter; identical on every platform.
inline double counter_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                             std::uint64_t c, std::uint64_t d) {
  std::uint64_t h = hash_combine(hash_combine(hash_combine(hash_combine(mix64(seed), a), b), c), d);
  double u1 = unit_open(h);
  double u2 = unit_open(mix64(h ^ 0xa0761d6478bd642fULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Brownian increments over the base grid k*dt, refinable by dyadic
// Brownian-bridge splitting so that any subdivision replays the same path.
class BrownianPath {
 public:
  BrownianPath(std::uint64_t seed, int dim, double dt) : seed_(seed), dim_(dim), dt_(dt) {}

  int dim() const { return dim_; }
  double dt() const { return dt_; }

  // Increment over [k dt + j h, k dt + (j+1) h] with h = dt / 2^level.
  Vec increment(std::uint64_t step, int level = 0, std::uint64_t index = 0) const {
    Vec out(dim_);
    for (int i = 0; i < dim_; ++i) out(i) = component(step, level, index, i);
    return out;
  }

 private:
  double component(std::uint64_t step, int level, std::uint64_t index, int i) const {
    if (level == 0) return std::sqrt(dt_) * counter_normal(seed_, step, 0, 0, i);
    double parent = component(step, level - 1, index / 2, i);
    double parent_len = dt_ / std::ldexp(1.0, level - 1);
    double z = counter_normal(seed_, step, level, index / 2, i);
    double left = 0.5 * parent + 0.5 * std::sqrt(parent_len) * z;
    return (index % 2 == 0) ? left : parent - left;
  }

  std::uint64_t seed_;
  int dim_;
  double dt_;
};

inline Vec normal_vector(Rng& rng, int n) {
  std::normal_distribution<double> nd;
  Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = nd(rng);
  return v;
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

}  // namespace sloc
