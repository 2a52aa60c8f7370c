#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "hybridcast/tensor.hpp"

namespace hybridcast {

/// splitmix64 finalizer; used to derive independent substream seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seeded generator. Every stochastic routine takes one of these by reference;
/// `substream(id)` gives a reproducible child stream that does not depend on
/// how much of the parent has been consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix_seed(seed)) {}

  std::uint64_t seed() const { return seed_; }

  Rng substream(std::uint64_t id) const { return Rng(mix_seed(seed_ ^ mix_seed(id + 0x51ed27ULL))); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  double normal() { return normal_(engine_); }
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Open-interval uniform, never exactly 0 or 1.
  double uniform_open() {
    double u = uniform();
    while (u <= 0.0 || u >= 1.0) u = uniform();
    return u;
  }

  /// Standard Gumbel draw: -log(-log(U)).
  double gumbel() { return -std::log(-std::log(uniform_open())); }

  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

  Tensor normal_tensor(Eigen::Index rows, Eigen::Index cols) {
    Tensor t(rows, cols);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = normal();
    return t;
  }

  Tensor gumbel_tensor(Eigen::Index rows, Eigen::Index cols) {
    Tensor t(rows, cols);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = gumbel();
    return t;
  }

  Tensor uniform_tensor(Eigen::Index rows, Eigen::Index cols, double lo, double hi) {
    Tensor t(rows, cols);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = uniform(lo, hi);
    return t;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace hybridcast
