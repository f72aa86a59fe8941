#pragma once

// Counter-based random number generation.
//
// Every stream is identified by (seed, stream, substream); draw i of a stream
// is a pure function of those four integers. This makes parallel Monte Carlo
// reproducible regardless of thread count or evaluation order: replication r
// always uses stream (master_seed, r, tag) no matter which worker runs it.

#include <cstdint>
#include <cmath>
#include <numeric>
#include <vector>

#include "kdiff/common.hpp"

namespace kdiff {

// SplitMix64 finalizer: a well-mixed 64-bit permutation.
inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0,
               std::uint64_t substream = 0)
      : key_(splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ substream)) {}

  // Derive an independent child stream; used for per-replication /
  // per-bootstrap-draw streams.
  Rng child(std::uint64_t stream, std::uint64_t substream = 0) const {
    Rng r(0);
    r.key_ = splitmix64(splitmix64(key_ ^ stream) ^ substream);
    return r;
  }

  std::uint64_t next_u64() { return splitmix64(key_ + 0x9E3779B97F4A7C15ULL * ++counter_); }

  // Uniform on [0, 1): 53 random mantissa bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n): multiply-shift mapping (deterministic, negligible bias
  // for the n used here, which never approaches 2^64).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  // Standard normal via Box-Muller; the spare draw is cached, so a stream's
  // draw sequence is still a pure function of its identity and call count.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // k distinct indices drawn uniformly from {0..n-1} (partial Fisher-Yates).
  std::vector<int> sample_without_replacement(int n, int k) {
    std::vector<int> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    std::vector<int> out;
    out.reserve(k);
    for (int i = 0; i < k; ++i) {
      const auto j = i + static_cast<int>(below(static_cast<std::uint64_t>(n - i)));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace kdiff
