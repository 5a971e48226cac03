// Counter-derived random streams. Every episode owns a stream computed
// from (master_seed, domain, index), so results do not depend on worker
// count or on the order episodes happen to finish in.
#pragma once

#include <cstdint>

namespace accel_eval {

// SplitMix64 finalizer; full-avalanche 64-bit mix.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

inline constexpr std::uint64_t combine64(std::uint64_t a, std::uint64_t b) {
  return mix64(a + 0x9e3779b97f4a7c15ULL + (b ^ (b >> 27)) * 0x632be59bd9b4e019ULL);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {}

  // Stream for one episode. domain separates independent uses of the same
  // master seed (0 = estimation batches, 1.. = proposal-search iterations).
  static RngStream derive(std::uint64_t master_seed, std::uint64_t domain,
                          std::uint64_t index) {
    return RngStream(combine64(combine64(master_seed, domain), index));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  // Uniform on [0,1).
  double next_u01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on the open interval (0,1); safe to push through inverse cdfs.
  double next_u01_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

 private:
  std::uint64_t state_;
};

}  // namespace accel_eval
