#pragma once

#include <cstdint>
#include <random>

namespace metts {

/// Seedable generator that counts its draws so a stream can be replayed
/// exactly from (seed, draws).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  static Rng replay(std::uint64_t seed, std::uint64_t draws) {
    Rng r(seed);
    r.engine_.discard(draws);
    r.draws_ = draws;
    return r;
  }

  /// Independent stream for the k-th child (chain k uses seed + k).
  Rng split(std::uint64_t k) const { return Rng(seed_ + k); }

  /// Uniform double in [0, 1) built from the top 53 bits of one draw.
  double uniform() {
    ++draws_;
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  std::uint64_t next_u64() {
    ++draws_;
    return engine_();
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t draws() const { return draws_; }

 private:
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::mt19937_64 engine_;
};

}  // namespace metts
