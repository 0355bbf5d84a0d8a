#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace nlos {

// mt19937_64 wrapper with hand-rolled variate transforms. The standard
// distributions are implementation-defined, so we pin the exact algorithms
// here to keep runs byte-reproducible.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  // Derive an independent stream, e.g. one per subsystem or per iteration.
  Rng fork(std::uint64_t stream_id) {
    std::uint64_t s = engine_();
    return Rng(s ^ (0x9E3779B97F4A7C15ull * (stream_id + 1)));
  }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection-free modulo is biased for huge n; n here is always small
    // (voxel counts, wall indices), so 64-bit modulo bias is negligible --
    // but use Lemire's method anyway since it is cheap.
    __uint128_t m = static_cast<__uint128_t>(engine_()) * n;
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Box-Muller; caches the second variate.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0, u2 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Poisson draw; Knuth for small rates, normal approximation above 256
  // (error far below sampling noise at that scale).
  std::uint64_t poisson(double rate) {
    if (rate <= 0.0) return 0;
    if (rate < 256.0) {
      double l = std::exp(-rate);
      std::uint64_t k = 0;
      double p = 1.0;
      do {
        ++k;
        p *= uniform();
      } while (p > l);
      return k - 1;
    }
    double x = std::round(normal(rate, std::sqrt(rate)));
    return x < 0.0 ? 0 : static_cast<std::uint64_t>(x);
  }

  // Engine state round trip for checkpointing.
  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    has_spare_ = false;
  }

private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nlos
