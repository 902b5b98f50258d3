#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

namespace trilevel {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Stateless:
// each (key, counter) pair maps to four independent 32-bit words, so any
// stream position can be evaluated directly from its indices.
class Philox4x32 {
 public:
  using Counter = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Counter generate(Counter ctr, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      ctr = single_round(ctr, key);
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85;

  static Counter single_round(const Counter& c, const Key& k) {
    const std::uint64_t p0 = std::uint64_t{kMul0} * c[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

// Uniform double in (0, 1] from the top 53 bits of a 64-bit word.
inline double unit_interval_open_left(std::uint64_t bits) {
  return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
}

// Standard normal deviate for one (trajectory, mode) stream at position
// `index`. One Philox call feeds a Box-Muller pair, so indices 2k and 2k+1
// share a call.
inline double stream_normal(std::uint64_t seed, std::uint64_t trajectory,
                            std::uint32_t mode, std::uint64_t index) {
  const std::uint64_t pair = index >> 1;
  const Philox4x32::Counter ctr{static_cast<std::uint32_t>(pair),
                                static_cast<std::uint32_t>(pair >> 32),
                                static_cast<std::uint32_t>(trajectory),
                                mode ^ (static_cast<std::uint32_t>(trajectory >> 32) << 8)};
  const Philox4x32::Key key{static_cast<std::uint32_t>(seed),
                            static_cast<std::uint32_t>(seed >> 32)};
  const auto w = Philox4x32::generate(ctr, key);
  const double u1 = unit_interval_open_left((std::uint64_t{w[0]} << 32) | w[1]);
  const double u2 = unit_interval_open_left((std::uint64_t{w[2]} << 32) | w[3]);
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  return (index & 1U) ? radius * std::sin(angle) : radius * std::cos(angle);
}

}  // namespace trilevel
