#ifndef HETDIAR_RNG_HPP
#define HETDIAR_RNG_HPP

#include <cstdint>
#include <random>

namespace hetdiar {

/// SplitMix64 finalizer; used to derive independent substream seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Seed for substream `key` of a generator seeded with `seed`.
std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t key);

// Seeded generator whose draws depend only on the engine output, so
// streams are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(mix_seed(seed)) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer on the closed range [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  /// Standard normal (Box-Muller, pairs cached).
  double normal();

  double exponential(double mean);

  Rng substream(std::uint64_t key) const { return Rng(substream_seed(seed_base_, key)); }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_base_ = engine_();
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace hetdiar

#endif  // HETDIAR_RNG_HPP
