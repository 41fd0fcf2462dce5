#ifndef PROXYDEC_RNG_HPP
#define PROXYDEC_RNG_HPP

#include <cstdint>

namespace proxydec {

// SplitMix64 used as a counter-based generator: draw i of stream s is
// mix(key(s) + (i + 1) * gamma). Output depends only on (seed, stream, i), so
// request streams never interfere and results match across platforms.
class PortableRng {
 public:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  constexpr PortableRng(std::uint64_t seed, std::uint64_t stream)
      : key_(mix(mix(seed) ^ (stream * kGamma + 0x632be59bd9b4e019ULL))) {}

  constexpr std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

  // Uniform in [0, 1) with 53 random bits.
  constexpr double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  constexpr std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace proxydec

#endif  // PROXYDEC_RNG_HPP
