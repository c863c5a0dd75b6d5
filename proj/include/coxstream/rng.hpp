#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace coxstream {

/// Philox4x32-10 counter-based generator. Streams are addressed by a 64-bit
/// key plus a 64-bit stream id placed in the high counter words, so every
/// (seed, replicate, block) triple gets an independent sequence without any
/// jump-ahead bookkeeping.
class Philox4x32 {
 public:
  explicit Philox4x32(std::uint64_t key, std::uint64_t stream = 0)
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
        counter_{0, 0, static_cast<std::uint32_t>(stream),
                 static_cast<std::uint32_t>(stream >> 32)} {}

  std::uint32_t next_u32() {
    if (pos_ == 4) {
      buffer_ = block(counter_, key_);
      // 64-bit counter in the low words; high words hold the stream id.
      if (++counter_[0] == 0) ++counter_[1];
      pos_ = 0;
    }
    return buffer_[pos_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t lo = next_u32();
    const std::uint64_t hi = next_u32();
    return lo | (hi << 32);
  }

  /// Uniform on [0, 1), 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  /// Uniform on the open interval (0, 1); safe as a log() argument.
  double next_double_open() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller (cosine branch; two uniforms per draw,
  /// fixed consumption so draw sequences stay aligned across scenarios).
  double next_normal() {
    const double u1 = next_double_open();
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double next_exponential(double rate) {
    return -std::log(next_double_open()) / rate;
  }

  /// Uniform index in [0, n), rejection-sampled to remove modulo bias.
  std::uint64_t next_index(std::uint64_t n) {
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

 private:
  static std::array<std::uint32_t, 4> block(std::array<std::uint32_t, 4> ctr,
                                            std::array<std::uint32_t, 2> key) {
    constexpr std::uint32_t kMul0 = 0xD2511F53u;
    constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
    constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
    constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
             static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
             static_cast<std::uint32_t>(p0)};
      key[0] += kWeyl0;
      key[1] += kWeyl1;
    }
    return ctr;
  }

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> buffer_{};
  int pos_ = 4;
};

/// Independent substream for one (replicate, block) cell of an experiment.
inline Philox4x32 make_stream(std::uint64_t seed, std::uint32_t replicate,
                              std::uint32_t block) {
  const std::uint64_t stream =
      (static_cast<std::uint64_t>(replicate) << 32) | block;
  return Philox4x32(seed, stream);
}

}  // namespace coxstream
