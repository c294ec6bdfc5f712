#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "selfdeblur/tensor.hpp"

namespace selfdeblur {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent sub-seed for a named stream of one run.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ (0xd1b54a32d192ed03ULL * (stream + 1)));
}

// mt19937_64 with the value mappings written out by hand. The standard
// distributions are implementation-defined, these are not, so a seed gives
// the same numbers on every toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one normal per call.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return mean + stddev * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

// I.i.d. uniform values on [0, 0.1].
template <class T>
Tensor<T> sample_z(const Shape& shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> z(shape);
  for (auto& v : z.data()) v = static_cast<T>(0.1 * rng.uniform());
  return z;
}

}  // namespace selfdeblur
