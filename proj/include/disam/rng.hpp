#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace disam {

// Deterministic RNG used everywhere randomness is needed. The distribution
// code is written out by hand (instead of std::*_distribution) so that the
// value stream is a pure function of the engine state and can be serialized
// into checkpoints for exact resume.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    // Rejection-free modulo is fine here: n is always tiny vs 2^64.
    return static_cast<int>(engine_() % static_cast<uint64_t>(n));
  }

  bool coin() { return (engine_() & 1u) != 0; }

  // Box-Muller; draws two uniforms per call and discards the sibling so the
  // generator carries no hidden distribution state.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
  }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = last - first;
    for (auto i = n - 1; i > 0; --i) {
      const auto j = engine_() % static_cast<uint64_t>(i + 1);
      std::swap(first[i], first[static_cast<decltype(i)>(j)]);
    }
  }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace disam
