#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>

namespace spar {

/// splitmix64 finalizer; used to derive independent seeds from a master seed.
[[nodiscard]] constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for sub-stream `stream` of `master`. Distinct streams give distinct seeds.
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return mix_seed(mix_seed(master) ^ mix_seed(stream + 0x632BE59BD9B4E019ULL));
}

/// Random stream used throughout the library. Caller-owned, never shared
/// between threads. Any type with `uniform()` returning [0,1) can stand in
/// where algorithms are templated on the source (tests force fixed draws that way).
class Rng {
 public:
  using engine_type = std::mt19937_64;

  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Uniform on [0, 1), 53 random bits.
  double uniform() noexcept { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1).
  double uniform_open() noexcept {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  /// Standard normal via Marsaglia's polar method (engine-only, so portable).
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double a, b, s;
    do {
      a = 2.0 * uniform() - 1.0;
      b = 2.0 * uniform() - 1.0;
      s = a * a + b * b;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = b * f;
    has_spare_ = true;
    return a * f;
  }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) noexcept {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  engine_type& engine() noexcept { return engine_; }

 private:
  engine_type engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Index draw for any uniform source (Rng or a test double).
template <class Source>
std::size_t draw_index(Source& src, std::size_t n) {
  return static_cast<std::size_t>(src.uniform() * static_cast<double>(n)) % n;
}

/// Fisher-Yates shuffle driven by a uniform source.
template <class Source, class Vec>
void shuffle_in_place(Vec& v, Source& src) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = draw_index(src, i);
    using std::swap;
    swap(v[i - 1], v[j]);
  }
}

}  // namespace spar
