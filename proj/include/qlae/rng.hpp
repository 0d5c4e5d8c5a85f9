#pragma once

#include "qlae/tensor.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace qlae {

/**
 * Counter-based pseudorandom stream (Philox-4x32 with 10 rounds).
 *
 * State is the triple (seed, stream_id, counter). The 64-bit seed forms the
 * key, the stream id occupies the upper counter words, and `counter` indexes
 * 32-bit outputs (four per block). Identical state yields identical output
 * on every platform because the generator is pure integer arithmetic;
 * distinct stream ids index disjoint counter spaces and are independent for
 * all practical purposes.
 *
 * Floating-point draws are deterministic given the integer stream. Normal
 * deviates use the Box-Muller transform, so their exact bits additionally
 * depend on the platform's libm; uniform and integer draws do not.
 */
class RngStream {
public:
  RngStream() : RngStream(0, 0) {}
  RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0)
      : seed_(seed), stream_(stream_id), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }
  std::uint64_t counter() const { return counter_; }
  void set_counter(std::uint64_t c) { counter_ = c; }

  /// Derive an independent stream from this one's identity.
  RngStream substream(std::uint64_t id) const { return RngStream(seed_, stream_ ^ (id * 0x9E3779B97F4A7C15ull), 0); }

  /// The raw keyed permutation: one 128-bit block of output for a given
  /// (seed, stream, block index). Exposed so the algorithm can be verified
  /// against reference vectors.
  static std::array<std::uint32_t, 4> block(std::uint64_t seed, std::uint64_t stream,
                                            std::uint64_t block_index) {
    constexpr std::uint32_t kM0 = 0xD2511F53u;
    constexpr std::uint32_t kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u;
    constexpr std::uint32_t kW1 = 0xBB67AE85u;
    std::uint32_t c0 = static_cast<std::uint32_t>(block_index);
    std::uint32_t c1 = static_cast<std::uint32_t>(block_index >> 32);
    std::uint32_t c2 = static_cast<std::uint32_t>(stream);
    std::uint32_t c3 = static_cast<std::uint32_t>(stream >> 32);
    std::uint32_t k0 = static_cast<std::uint32_t>(seed);
    std::uint32_t k1 = static_cast<std::uint32_t>(seed >> 32);
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * c0;
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * c2;
      const std::uint32_t n0 = static_cast<std::uint32_t>(p1 >> 32) ^ c1 ^ k0;
      const std::uint32_t n1 = static_cast<std::uint32_t>(p1);
      const std::uint32_t n2 = static_cast<std::uint32_t>(p0 >> 32) ^ c3 ^ k1;
      const std::uint32_t n3 = static_cast<std::uint32_t>(p0);
      c0 = n0;
      c1 = n1;
      c2 = n2;
      c3 = n3;
      k0 += kW0;
      k1 += kW1;
    }
    return {c0, c1, c2, c3};
  }

  std::uint32_t next_u32() {
    const std::uint64_t block_index = counter_ >> 2;
    const unsigned lane = static_cast<unsigned>(counter_ & 3);
    ++counter_;
    return block(seed_, stream_, block_index)[lane];
  }

  std::uint64_t next_u64() {
    const std::uint64_t lo = next_u32();
    const std::uint64_t hi = next_u32();
    return (hi << 32) | lo;
  }

  /// Uniform in [0, 1). Float uses 24 random bits, double 53.
  template <class T>
  T uniform() {
    if constexpr (std::is_same_v<T, float>) {
      return static_cast<float>(next_u32() >> 8) * 0x1.0p-24f;
    } else {
      return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }
  }

  /// Standard normal via Box-Muller on two uniform draws. The sine branch is
  /// discarded so the stream state stays exactly (seed, stream, counter).
  template <class T>
  T normal() {
    // u1 in (0, 1] so the log is finite.
    const double u1 = 1.0 - uniform<double>();
    const double u2 = uniform<double>();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    return static_cast<T>(r * std::cos(theta));
  }

  /// Uniform integer in [0, n) by bitmask rejection (unbiased).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
    if (n == 1) return 0;
    std::uint64_t mask = n - 1;
    mask |= mask >> 1;
    mask |= mask >> 2;
    mask |= mask >> 4;
    mask |= mask >> 8;
    mask |= mask >> 16;
    mask |= mask >> 32;
    for (;;) {
      const std::uint64_t v = (mask <= 0xFFFFFFFFull ? next_u32() : next_u64()) & mask;
      if (v < n) return v;
    }
  }

  template <class T>
  Tensor<T> draw_uniform(std::vector<std::size_t> shape) {
    Tensor<T> out(std::move(shape));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = uniform<T>();
    return out;
  }

  template <class T>
  Tensor<T> draw_normal(std::vector<std::size_t> shape) {
    Tensor<T> out(std::move(shape));
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = normal<T>();
    return out;
  }

  /// `count` indices in [0, n). Without replacement requires count <= n and
  /// draws a partial Fisher-Yates shuffle; count == n yields a permutation.
  std::vector<std::size_t> draw_choice(std::size_t n, std::size_t count, bool with_replacement = true) {
    if (n == 0) throw std::invalid_argument("draw_choice: n must be positive");
    std::vector<std::size_t> out;
    out.reserve(count);
    if (with_replacement) {
      for (std::size_t i = 0; i < count; ++i) out.push_back(static_cast<std::size_t>(uniform_int(n)));
      return out;
    }
    if (count > n) throw std::invalid_argument("draw_choice: count > n without replacement");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(uniform_int(n - i));
      std::swap(pool[i], pool[j]);
      out.push_back(pool[i]);
    }
    return out;
  }

private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace qlae
