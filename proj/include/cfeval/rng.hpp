#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace cfeval {

// Counter-based deterministic RNG. All randomness in the synthetic world flows
// from one 64-bit seed through named streams; the exact scheme (SplitMix64
// core, FNV-1a stream hashing, golden-ratio substream offsets) is documented
// in docs/FORMATS.md so sequences are reproducible across platforms.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  static std::uint64_t fnv1a(std::string_view name) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : name) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

  explicit Rng(std::uint64_t seed) : state_(seed) {}

  // Stream "name" of a master seed; index selects a substream (e.g. a sample).
  static Rng stream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
    return Rng(mix(mix(seed ^ fnv1a(name)) + index * kGamma));
  }

  std::uint64_t next_u64() {
    state_ += kGamma;
    return mix(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n) by rejection (no modulo bias).
  std::uint64_t next_below(std::uint64_t n) {
    std::uint64_t bound = n == 0 ? 0 : (0ull - n) % n;  // 2^64 mod n
    for (;;) {
      std::uint64_t v = next_u64();
      if (v >= bound) return v % n;
    }
  }

  // Standard normal via Box-Muller; the paired value is cached.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // Fisher-Yates over indices 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    for (std::size_t i = 0; i < n; ++i) p[i] = i;
    for (std::size_t i = n; i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i));
      std::swap(p[i - 1], p[j]);
    }
    return p;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace cfeval
