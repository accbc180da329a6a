#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mint {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic RNG wrapper. All distributions are hand-rolled so that
// streams are reproducible byte-for-byte across platforms and stdlibs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(splitmix64(seed)) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // [0, n)
  int uniform_int(int n) {
    return n <= 1 ? 0 : static_cast<int>(gen_() % static_cast<uint64_t>(n));
  }

  // Box-Muller, one sample per call.
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Derive an independent substream seed.
  uint64_t substream(uint64_t stream_id) {
    return splitmix64(gen_() ^ splitmix64(stream_id));
  }

 private:
  std::mt19937_64 gen_;
};

// Independent substream seed from a base seed without consuming state.
inline uint64_t derive_seed(uint64_t base, uint64_t stream_id) {
  return splitmix64(base ^ splitmix64(stream_id + 0x51ed2701ULL));
}

}  // namespace mint
