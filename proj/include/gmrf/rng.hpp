#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gmrf {

/// Seedable generator with a fixed, platform-independent output stream.
///
/// The raw engine is std::mt19937_64, whose output sequence the standard pins
/// down exactly. The distribution code lives here rather than in <random>
/// because the library distributions are implementation-defined.
///
/// Stream splitting: substream k of seed s is seeded with
/// splitmix64(s + 0x9E3779B97F4A7C15 * (k + 1)).
class Rng {
public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  static std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(seed + 0x9E3779B97F4A7C15ULL * (stream + 1));
  }

  Rng substream(std::uint64_t stream) const { return Rng(stream_seed(seed_, stream)); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] by rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t range = static_cast<std::uint64_t>(hi - lo) + 1;
    if (range == 0) return static_cast<std::int64_t>(next());
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % range);
  }

  /// Standard normal, Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, r2;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      r2 = u * u + v * v;
    } while (r2 >= 1.0 || r2 == 0.0);
    const double scale = std::sqrt(-2.0 * std::log(r2) / r2);
    spare_ = v * scale;
    has_spare_ = true;
    return u * scale;
  }

  /// Gamma(1) draw; rows of i.i.d. exponentials normalized give Dirichlet(1).
  double exponential() { return -std::log1p(-uniform()); }

private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gmrf
