#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace sport {

/// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Seed for stream `stream` under `master`. Derived streams are independent of
/// the order in which they are requested, so work split across workers draws
/// the same numbers as a sequential run.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

/// Seeded generator with explicitly specified distributions. The standard
/// library distributions are implementation-defined, so the transforms here
/// are written out to keep datasets and checkpoints reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one draw per call, no cached state).
  double normal();

  /// Unbiased integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace sport
