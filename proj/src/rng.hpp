#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mmpivot {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_stream(const char* tag) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const char* p = tag; *p; ++p) h = (h ^ uint64_t(*p)) * 0x100000001b3ULL;
  return h;
}

// mt19937_64 with hand-rolled draws. The std:: distributions are not
// bit-stable across standard library implementations; the engine itself is.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : engine_(splitmix64(seed ^ splitmix64(stream ^ 0x5bd1e995u))) {}

  Rng(uint64_t seed, const char* stream_tag) : Rng(seed, hash_stream(stream_tag)) {}

  uint64_t next() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n); multiply-shift bound, n must be positive
  uint64_t below(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  // standard normal via Marsaglia polar method
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double mul = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * mul;
    have_spare_ = true;
    return u * mul;
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mmpivot
