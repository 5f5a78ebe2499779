#pragma once

#include <cmath>
#include <cstdint>

namespace mfblue {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// One-shot 64-bit mixer used to derive child stream keys.
inline std::uint64_t mix_key(std::uint64_t key, std::uint64_t tag) {
  std::uint64_t s = key ^ (0x632be59bd9b4e019ull + 0x9e3779b97f4a7c15ull * tag);
  std::uint64_t a = splitmix64_next(s);
  std::uint64_t b = splitmix64_next(s);
  return a ^ (b << 1);
}

/// Counter-keyed xoshiro256++ stream.
///
/// Streams are identified by a 64-bit key; `child(tag)` derives an
/// independent stream from (key, tag) without touching this stream's
/// state. Trials keyed by (seed, trial index) therefore produce
/// identical output no matter how work is scheduled across threads,
/// which is what makes experiment results byte-reproducible.
class RngStream {
 public:
  RngStream() : RngStream(0) {}

  explicit RngStream(std::uint64_t key) : key_(key) {
    std::uint64_t s = key;
    for (auto& word : state_) word = splitmix64_next(s);
    have_spare_normal_ = false;
    spare_normal_ = 0.0;
  }

  /// Derive an independent stream from this stream's identity.
  RngStream child(std::uint64_t tag) const { return RngStream(mix_key(key_, tag)); }

  std::uint64_t key() const { return key_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform double in (0, 1]; never returns 0 so log() is safe.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) {
    const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

  /// Standard normal via Box-Muller; the second variate of each pair is
  /// cached so consecutive calls cost one transcendental pair per two draws.
  double normal() {
    if (have_spare_normal_) {
      have_spare_normal_ = false;
      return spare_normal_;
    }
    const double u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_normal_ = r * std::sin(theta);
    have_spare_normal_ = true;
    return r * std::cos(theta);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection-free multiply-shift; bias is negligible for n << 2^64.
    unsigned __int128 product = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(product >> 64);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t key_;
  std::uint64_t state_[4];
  bool have_spare_normal_;
  double spare_normal_;
};

}  // namespace mfblue
