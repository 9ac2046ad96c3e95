#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "crossenc/errors.hpp"

namespace crossenc {

// Deterministic random stream. All distributions are implemented here rather
// than with std:: distribution objects so the exact draw sequence is pinned
// and the full generator state round-trips through checkpoints.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform integer in [0, n).
  uint64_t uniform_u64(uint64_t n) {
    if (n == 0) throw NumericsError("Rng::uniform_u64: n must be positive");
    // Rejection sampling to avoid modulo bias.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return x % n;
  }

  int uniform_int(int n) { return static_cast<int>(uniform_u64(static_cast<uint64_t>(n))); }

  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Box-Muller (cosine branch only; one normal per two uniforms).
  float normal(float mean, float stddev) {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mean + stddev * static_cast<float>(z);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }

  void deserialize(const std::string& state) {
    std::istringstream is(state);
    is >> gen_;
    if (is.fail()) throw DataError("Rng::deserialize: malformed generator state");
  }

 private:
  std::mt19937_64 gen_;
};

// Stable stream derivation: combine a seed with a label so independent
// streams (init, data, dropout, ...) never overlap.
inline uint64_t derive_seed(uint64_t seed, const std::string& label) {
  uint64_t h = 0xcbf29ce484222325ULL ^ seed;
  for (char c : label) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  // splitmix64 finalizer
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

inline uint64_t derive_seed(uint64_t seed, const std::string& label, uint64_t index) {
  return derive_seed(seed ^ (0x9e3779b97f4a7c15ULL * (index + 1)), label);
}

}  // namespace crossenc
