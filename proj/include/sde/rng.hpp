#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>

namespace sde {

// Deterministic pseudo-random utilities. std::mt19937_64 is bit-exact across
// implementations; the stdlib distributions are not, so all transforms from
// raw bits to variates live here.

std::uint64_t splitmix64(std::uint64_t& state);

// Hash-combines a master seed with a stream id so that independent consumers
// (persons, folds, draws) get decorrelated engines.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via the Marsaglia polar method (no libm trig).
  double normal();
  // Gamma(shape, scale) via Marsaglia-Tsang squeeze.
  double gamma(double shape, double scale);
  bool bernoulli(double p);
  // Uniform integer on [lo, hi] inclusive.
  int uniform_int(int lo, int hi);

  std::uint64_t bits() { return gen_(); }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

Eigen::VectorXd normal_vector(Rng& rng, Eigen::Index n);

// Deterministic in-place Fisher-Yates shuffle.
template <class Vec>
void shuffle(Vec& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace sde
