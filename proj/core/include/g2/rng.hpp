#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <vector>

namespace g2 {

/// xoshiro256++ with splitmix64 seeding. Hand-rolled so sequences are
/// identical across platforms and the full state (including the cached
/// Box-Muller spare) round-trips through checkpoints.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
    has_spare_ = false;
    spare_ = 0.0;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform in [0,1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  /// Uniform integer in [0,n).
  int uniform_int(int n) { return int(next_u64() % std::uint64_t(n)); }

  /// N(0,1) via Box-Muller.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0,1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double gaussian(double mean, double sigma) { return mean + sigma * gaussian(); }

  /// Gaussian with sigma, clamped to [-bound, bound].
  double clamped_gaussian(double sigma, double bound) {
    double v = sigma * gaussian();
    if (v > bound) v = bound;
    if (v < -bound) v = -bound;
    return v;
  }

  /// Derive an independent stream (for per-subsystem seeding).
  Rng fork() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ull); }

  std::vector<std::uint64_t> state() const {
    return {s_[0], s_[1], s_[2], s_[3], has_spare_ ? 1ull : 0ull,
            std::bit_cast<std::uint64_t>(spare_)};
  }

  void set_state(const std::vector<std::uint64_t>& st) {
    s_[0] = st[0];
    s_[1] = st[1];
    s_[2] = st[2];
    s_[3] = st[3];
    has_spare_ = st[4] != 0;
    spare_ = std::bit_cast<double>(st[5]);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  static std::uint64_t splitmix64(std::uint64_t& x) {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace g2
