#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace mdphom {

/// Deterministic random stream. Gaussian draws use an explicit Box-Muller
/// transform so that sequences are reproducible independent of the standard
/// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    // 53-bit mantissa from the top bits.
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (no state carried between draws).
  double normal() {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

 private:
  std::mt19937_64 engine_;
};

/// FNV-1a hash of a name, used to derive per-purpose substream seeds from a
/// single run seed so that independently named streams stay aligned across
/// configurations that consume different subsets of them.
inline std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;
  for (const char c : name) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view name) {
  // SplitMix64 finalizer over the combined value.
  std::uint64_t z = master ^ hash_name(name);
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline Rng derive_rng(std::uint64_t master, std::string_view name) {
  return Rng(derive_seed(master, name));
}

}  // namespace mdphom
