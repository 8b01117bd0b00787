#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace bitlab {

// Deterministic splitmix64-based generator. std:: distributions are
// implementation-defined, so every random draw in the project goes through
// this class to keep reruns bit-identical across platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  float uniform(float lo, float hi) {
    return lo + static_cast<float>(uniform()) * (hi - lo);
  }

  // [0, n)
  int uniform_int(int n) {
    return static_cast<int>(uniform() * static_cast<double>(n));
  }

  float normal(float mean, float stddev) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = static_cast<float>(r * std::sin(theta));
    have_spare_ = true;
    return mean + stddev * static_cast<float>(r * std::cos(theta));
  }

  // Stateless hash-combine for deriving substream seeds.
  static uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  uint64_t state_;
  bool have_spare_ = false;
  float spare_ = 0.f;
};

// Counter-based substream: the same (seed, path) always yields the same
// stream regardless of what other streams were drawn before it.
inline Rng stream_rng(uint64_t seed, std::initializer_list<uint64_t> path) {
  uint64_t s = seed;
  for (uint64_t p : path) s = Rng::mix(s, p);
  return Rng(s);
}

}  // namespace bitlab
