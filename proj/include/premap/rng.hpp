#ifndef PREMAP_RNG_HPP
#define PREMAP_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace premap {

// splitmix64 finalizer; used to decorrelate seed components.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent stream seed from (global seed, purpose tag, node id).
/// Every sampling site in the library goes through this, so runs are
/// reproducible regardless of evaluation order or thread count.
inline std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view tag,
                                 std::uint64_t node_id = 0) {
  return mix64(mix64(global_seed) ^ mix64(hash_tag(tag)) ^ mix64(node_id));
}

/// Seeded generator producing uniform doubles without going through
/// std::uniform_real_distribution (whose output is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform double in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace premap

#endif  // PREMAP_RNG_HPP
