#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace mergesim {

// splitmix64: one 64-bit state per stream, identical output on every platform.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seeded stream scoped to one entity (a vehicle, a spawner lane, the learner).
// Identical (seed, stream_id, draw index) yields identical values everywhere,
// so per-entity draws are independent of iteration order.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::string_view stream_id)
      : state_(mix(seed, fnv1a64(stream_id))) {}

  std::uint64_t next_u64() { return splitmix64_next(state_); }

  // Uniform in [0, 1), 53 bits.
  double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return u01() < p; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(next_u64() % n);
  }

  // Box-Muller; consumes exactly two draws per call.
  double normal() {
    double u1 = u01();
    double u2 = u01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  double gumbel() {
    double u = u01();
    if (u <= 0.0) u = 0x1.0p-53;
    return -std::log(-std::log(u));
  }

 private:
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t s = seed ^ (tag + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2));
    splitmix64_next(s);
    splitmix64_next(s);
    return s;
  }

  std::uint64_t state_ = 0x853c49e6748fea9bULL;
};

}  // namespace mergesim
