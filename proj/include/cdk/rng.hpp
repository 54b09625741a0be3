#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cdk {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic generator with explicit seeding. Gaussian samples use
// Box-Muller instead of std::normal_distribution so that sequences are
// identical across standard library implementations. fork() derives an
// independent stream from the original seed, unaffected by how many
// samples were already drawn.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0)
      : engine_(splitmix64(seed)), seed_hash_(splitmix64(seed)) {}

  Rng fork(uint64_t stream) const {
    Rng r;
    r.seed_hash_ = splitmix64(seed_hash_ ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
    r.engine_.seed(r.seed_hash_);
    return r;
  }

  double uniform() {
    // 53-bit mantissa in [0,1)
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n), rejection sampled to avoid modulo bias.
  uint64_t uniform_int(uint64_t n) {
    uint64_t limit = ~0ULL - (~0ULL % n);
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_hash_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace cdk
