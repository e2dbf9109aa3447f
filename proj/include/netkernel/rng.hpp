#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace netkernel {

// xoshiro256** seeded through splitmix64. Self-contained so that every draw
// is reproducible bit-for-bit across platforms and standard library versions;
// std::normal_distribution and friends do not give that guarantee.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& si : s_) si = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform on [0, 1), 53-bit resolution
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // standard normal via Box-Muller; caches the second draw
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(), u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  // uniform integer in [0, n)
  int uniform_int(int n) {
    const int v = static_cast<int>(uniform01() * static_cast<double>(n));
    return v >= n ? n - 1 : v;
  }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Mixes a master seed with a list of tags (layer index, grid point, trial id,
// ...) into an independent stream seed. Cell-level results stay identical no
// matter how work is scheduled across threads.
inline uint64_t derive_stream(uint64_t master, std::initializer_list<uint64_t> tags) {
  uint64_t x = master ^ 0xd6e8feb86659fd93ULL;
  uint64_t acc = Rng::splitmix64(x);
  for (uint64_t t : tags) {
    x = acc ^ (t + 0x9e3779b97f4a7c15ULL);
    acc = Rng::splitmix64(x);
  }
  return acc;
}

}  // namespace netkernel
