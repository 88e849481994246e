#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace tmur {

// 64-bit FNV-1a; stable across platforms and runs, unlike std::hash.
std::uint64_t stable_hash(std::string_view text);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

// Seeded random stream. fork(label) derives an independent stream per purpose
// ("split", "init", "shuffle", ...) so consumers never perturb each other.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  Rng fork(std::string_view label) const { return Rng(mix_seed(seed_, stable_hash(label))); }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    std::shuffle(items.begin(), items.end(), engine_);
  }

  std::mt19937_64& engine() noexcept { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace tmur
