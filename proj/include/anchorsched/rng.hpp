#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace anchorsched {

// All randomness in the project flows through RandomStream. The engine
// (mt19937_64) is fully specified by the C++ standard and the distribution
// transforms below are written out explicitly, so identical seeds produce
// bit-identical draw sequences on every platform. Never use the
// implementation-defined std::*_distribution classes.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random mantissa bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer on [lo, hi], inclusive. Unbiased via rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % span;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % span);
  }

  // Rayleigh-distributed amplitude with the given scale, by inverse CDF.
  double rayleigh(double scale) {
    return scale * std::sqrt(-2.0 * std::log(1.0 - uniform01()));
  }

 private:
  std::mt19937_64 engine_;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

// 64-bit FNV-1a, used for hashing names and artifacts into seed tokens.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Derives an independent child seed from a base seed and a token path.
// Every (repetition, scheduler, stage, purpose) stream in the experiment
// harness is produced this way, so one master seed reproducibly fans out
// into decorrelated streams: seed = mix(mix(...mix(base) ^ t0...) ^ t1) ...
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> tokens) {
  std::uint64_t h = detail::splitmix64(base);
  for (std::uint64_t t : tokens) h = detail::splitmix64(h ^ t);
  return h;
}

}  // namespace anchorsched
