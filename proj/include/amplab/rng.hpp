#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

#include "amplab/common.hpp"

namespace amplab {

/// Seeded random stream with hand-rolled samplers so that draws are
/// bit-reproducible across platforms and standard-library versions.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : gen_(seed) {}

  /// Independent stream for a (seed, a, b) triple, e.g. (run seed, iteration,
  /// episode). Streams derived from distinct triples are effectively
  /// uncorrelated.
  static RngStream derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<unsigned>(seed), static_cast<unsigned>(seed >> 32),
                      static_cast<unsigned>(a),    static_cast<unsigned>(a >> 32),
                      static_cast<unsigned>(b),    static_cast<unsigned>(b >> 32)};
    RngStream out(0);
    out.gen_.seed(seq);
    return out;
  }

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(gen_() % static_cast<std::uint64_t>(hi - lo + 1));
  }

  /// Inverse-CDF Poisson sampler; exact for mean == 0.
  int poisson(double mean) {
    require(mean >= 0.0, "poisson mean must be nonnegative, got ", mean);
    if (mean == 0.0) return 0;
    const double u = uniform01();
    double p = std::exp(-mean);
    double cdf = p;
    int k = 0;
    const int cap = static_cast<int>(mean + 40.0 * std::sqrt(mean) + 50.0);
    while (u > cdf && k < cap) {
      ++k;
      p *= mean / k;
      cdf += p;
    }
    return k;
  }

  /// Index sampled proportionally to probs (assumed to sum to ~1); the final
  /// bucket absorbs any floating-point slack.
  std::size_t categorical(std::span<const double> probs) {
    require(!probs.empty(), "categorical needs at least one outcome");
    const double u = uniform01();
    double cum = 0.0;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
      cum += probs[i];
      if (u < cum) return i;
    }
    return probs.size() - 1;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace amplab
