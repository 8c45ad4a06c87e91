#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <numbers>

namespace cflit {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Derives an independent stream key from a base seed and a tuple of
/// coordinates, e.g. (seed, link, device, subcarrier, block).
constexpr std::uint64_t stream_key(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t h = detail::mix64(seed + detail::kGolden);
  for (std::uint64_t id : ids) {
    h = detail::mix64(h ^ (id + detail::kGolden + (h << 6) + (h >> 2)));
  }
  return h;
}

/// Counter-based generator: the n-th output is a pure function of (key, n),
/// so any stream can be replayed or jumped without shared state.
/// Satisfies UniformRandomBitGenerator.
///
/// The distribution helpers below are written out instead of using
/// <random> distributions so that draws are identical across standard
/// library implementations.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  /// Uniform integer in [0, n) by rejection; n > 0.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = max() - max() % n;
    std::uint64_t x = (*this)();
    while (x >= limit) x = (*this)();
    return x % n;
  }

  double exponential() { return -std::log(uniform()); }

  /// Circularly-symmetric complex Gaussian CN(0, variance), Box-Muller.
  std::complex<double> complex_normal(double variance = 1.0) {
    const double radius = std::sqrt(variance * exponential());
    const double angle = 2.0 * std::numbers::pi * uniform();
    return std::polar(radius, angle);
  }

  /// Real N(mean, stddev^2). Draws in pairs and caches the spare value.
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    const std::complex<double> z = complex_normal(2.0);
    spare_ = z.imag();
    has_spare_ = true;
    return mean + stddev * z.real();
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cflit
