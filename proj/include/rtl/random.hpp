#pragma once

// Seeded substreams. Every random draw in the library comes from an engine
// seeded by hash(seed, label, index), so results do not depend on which
// worker consumed which draw.

#include <cstdint>
#include <random>
#include <string_view>

namespace rtl {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a offset basis
  for (unsigned char ch : label) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t substream_seed(std::uint64_t seed, std::string_view label,
                                    std::uint64_t index = 0) {
  return splitmix64(splitmix64(seed ^ hash_label(label)) + splitmix64(index + 0x51ed2701ULL));
}

/// Thin wrapper over mt19937_64 bound to one named substream.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view label, std::uint64_t index = 0)
      : engine_(substream_seed(seed, label, index)) {}

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace rtl
