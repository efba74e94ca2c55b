#pragma once

#include <cstdint>
#include <limits>

namespace vewane {

/// SplitMix64 generator; satisfies UniformRandomBitGenerator so it plugs into
/// the <random> distributions.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix(state_);
  }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

/// Independent stream for (seed, stream, index), e.g. (seed, replication,
/// participant). Streams do not depend on the order they are created in.
inline SplitMix64 substream(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t h = SplitMix64::mix(seed + 0x632be59bd9b4e019ULL);
  h = SplitMix64::mix(h ^ (stream + 0x9e3779b97f4a7c15ULL));
  h = SplitMix64::mix(h ^ (index + 0xd1b54a32d192ed03ULL));
  return SplitMix64(h);
}

}  // namespace vewane
