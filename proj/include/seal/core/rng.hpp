#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "seal/core/errors.hpp"

namespace seal {

// xoshiro256** with splitmix64 seeding. Self-contained so that streams are
// reproducible across standard libraries and platforms; the four-word state
// serializes into checkpoints.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) {
      // splitmix64
      x += 0x9e3779b97f4a7c15ULL;
      std::uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      word = z ^ (z >> 31);
    }
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire-style rejection to avoid modulo bias.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      const std::uint64_t threshold = (0ULL - n) % n;
      while (lo < threshold) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Standard normal via Box-Muller. No cached spare: keeps the serialized
  // state the full description of the stream.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  // Derive an independent generator for a named substream.
  Rng fork(std::uint64_t stream) {
    Rng child(0);
    child.state_[0] = next_u64() ^ (0x632be59bd9b4e019ULL * (stream + 1));
    child.state_[1] = next_u64() + stream;
    child.state_[2] = next_u64();
    child.state_[3] = next_u64() ^ stream;
    bool all_zero = true;
    for (auto w : child.state_) all_zero &= (w == 0);
    if (all_zero) child.reseed(stream);
    return child;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << std::hex << state_[0] << ' ' << state_[1] << ' ' << state_[2] << ' '
       << state_[3];
    return os.str();
  }

  static Rng deserialize(const std::string& text) {
    Rng rng(0);
    std::istringstream is(text);
    is >> std::hex >> rng.state_[0] >> rng.state_[1] >> rng.state_[2] >>
        rng.state_[3];
    if (is.fail()) throw DataError("invalid rng state string: " + text);
    return rng;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> state_{};
};

}  // namespace seal
