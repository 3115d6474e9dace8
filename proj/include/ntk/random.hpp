#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include <boost/math/special_functions/erf.hpp>

namespace ntk {

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

using Philox4x64Counter = std::array<std::uint64_t, 4>;
using Philox4x64Key = std::array<std::uint64_t, 2>;

/// Philox4x64 with 10 rounds (Salmon et al., SC'11).  Bit-compatible with
/// numpy.random.Philox.
inline Philox4x64Counter philox4x64(Philox4x64Counter ctr, Philox4x64Key key) {
  constexpr std::uint64_t kMul0 = 0xD2E7470EE14C6C93ULL;
  constexpr std::uint64_t kMul1 = 0xCA5A826395121157ULL;
  constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
  constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    const unsigned __int128 p0 = static_cast<unsigned __int128>(kMul0) * ctr[0];
    const unsigned __int128 p1 = static_cast<unsigned __int128>(kMul1) * ctr[2];
    const auto hi0 = static_cast<std::uint64_t>(p0 >> 64);
    const auto lo0 = static_cast<std::uint64_t>(p0);
    const auto hi1 = static_cast<std::uint64_t>(p1 >> 64);
    const auto lo1 = static_cast<std::uint64_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

}  // namespace detail

/// Counter-based random stream.  The (seed, stream_id) pair fully determines
/// the sequence; position is the only mutable state, so copies are
/// independent cursors over the same stream.
class SeededSampler {
 public:
  explicit SeededSampler(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed), stream_id_(stream_id) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t position() const { return position_; }

  void reset() { position_ = 0; }

  /// Sampler for an independent child stream, e.g. one Monte Carlo replica.
  SeededSampler derive(std::uint64_t child) const {
    return SeededSampler(seed_, detail::splitmix64(stream_id_ ^ detail::splitmix64(child + 1)));
  }

  std::uint64_t next_u64() {
    const std::uint64_t block = position_ / 4;
    const auto lane = static_cast<std::size_t>(position_ % 4);
    if (lane == 0 || block != cached_block_) {
      // counter words: (block, 0, stream_id, 0); key: (seed, mixed seed)
      cache_ = detail::philox4x64({block, 0, stream_id_, 0}, {seed_, detail::splitmix64(seed_)});
      cached_block_ = block;
    }
    ++position_;
    return cache_[lane];
  }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by inversion of the CDF.
  double normal() {
    const double u = uniform();
    return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * u);
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::uint64_t position_ = 0;
  std::uint64_t cached_block_ = ~std::uint64_t{0};
  detail::Philox4x64Counter cache_{};
};

}  // namespace ntk
