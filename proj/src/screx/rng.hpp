#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <utility>

namespace screx {

// Counter-based pseudo-random generator (Threefry-style 2x64 block, 20
// rounds).  Every output is a pure function of (key, counter), so parallel
// workers can draw from disjoint counter ranges without shared state and a
// run is reproducible no matter how work is scheduled.
class CounterRng {
 public:
  CounterRng(uint64_t seed, uint64_t stream) : k0_(seed), k1_(stream) {}

  std::pair<uint64_t, uint64_t> raw(uint64_t c0, uint64_t c1) const {
    constexpr uint64_t parity = 0x1BD11BDAA9FC1A22ULL;
    constexpr int rot[8] = {16, 42, 12, 31, 16, 32, 24, 21};
    const uint64_t ks[3] = {k0_, k1_, k0_ ^ k1_ ^ parity};
    uint64_t x0 = c0 + k0_;
    uint64_t x1 = c1 + k1_;
    for (int r = 0; r < 20; ++r) {
      x0 += x1;
      x1 = rotl(x1, rot[r % 8]);
      x1 ^= x0;
      if ((r + 1) % 4 == 0) {
        const uint64_t s = (r + 1) / 4;  // 1..5
        x0 += ks[s % 3];
        x1 += ks[(s + 1) % 3] + s;
      }
    }
    return {x0, x1};
  }

  // Uniform in [0,1) from one word of the block selected by lane (0 or 1).
  double uniform(uint64_t c0, uint64_t c1, int lane) const {
    auto [a, b] = raw(c0, c1);
    return to_unit(lane == 0 ? a : b);
  }

  double uniform_range(double lo, double hi, uint64_t c0, uint64_t c1, int lane) const {
    return lo + (hi - lo) * uniform(c0, c1, lane);
  }

  // Two independent standard normal values per counter (Box-Muller).
  std::pair<double, double> gaussian_pair(uint64_t c0, uint64_t c1) const {
    auto [a, b] = raw(c0, c1);
    // keep u1 strictly positive so log() is finite
    const double u1 = to_unit_open(a);
    const double u2 = to_unit(b);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 2.0 * std::numbers::pi * u2;
    return {r * std::cos(t), r * std::sin(t)};
  }

  double gaussian(uint64_t c0, uint64_t c1, int lane) const {
    auto [g0, g1] = gaussian_pair(c0, c1);
    return lane == 0 ? g0 : g1;
  }

  // Fills out[i] with N(0,1) draws.  Counter layout: c1 = (c1_hi << 32) | block,
  // two values per block, so c1_hi identifies the logical draw (attempt,
  // trace index, ...) and must be < 2^32.
  void fill_gaussian(std::span<double> out, uint64_t c0, uint64_t c1_hi) const {
    for (size_t i = 0; i < out.size(); i += 2) {
      auto [g0, g1] = gaussian_pair(c0, (c1_hi << 32) | (i / 2));
      out[i] = g0;
      if (i + 1 < out.size()) out[i + 1] = g1;
    }
  }

  void fill_uniform(std::span<double> out, double lo, double hi, uint64_t c0,
                    uint64_t c1_hi) const {
    for (size_t i = 0; i < out.size(); i += 2) {
      auto [a, b] = raw(c0, (c1_hi << 32) | (i / 2));
      out[i] = lo + (hi - lo) * to_unit(a);
      if (i + 1 < out.size()) out[i + 1] = lo + (hi - lo) * to_unit(b);
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int n) { return (x << n) | (x >> (64 - n)); }
  static double to_unit(uint64_t x) { return double(x >> 11) * 0x1.0p-53; }
  static double to_unit_open(uint64_t x) { return (double(x >> 11) + 1.0) * 0x1.0p-53; }

  uint64_t k0_, k1_;
};

// Key-space partition for the independent random streams used across the
// toolkit.  Streams never share (seed, stream) pairs, so draws cannot collide.
namespace rng_stream {
constexpr uint64_t oracle_noise = 1;       // metered trace noise, counter = query index
constexpr uint64_t oracle_noise_pure = 2;  // nonce-addressed trace noise
constexpr uint64_t weights = 3;            // model generation
constexpr uint64_t sampler = 4;            // attack input sampling
constexpr uint64_t kmeans = 5;             // clustering restarts
constexpr uint64_t eval = 6;               // evaluation inputs
constexpr uint64_t head = 7;               // last-layer fit inputs
}  // namespace rng_stream

}  // namespace screx
