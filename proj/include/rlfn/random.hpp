#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "rlfn/tensor.hpp"

namespace rlfn {

// Seeded generator with explicitly defined mappings, so streams are identical across standard
// library implementations (std distributions are not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [lo, hi].
  int uniform_int(int lo, int hi) {
    const auto range = static_cast<std::uint64_t>(static_cast<std::int64_t>(hi) - lo + 1);
    const auto scaled = static_cast<std::uint64_t>((static_cast<unsigned __int128>(next()) * range) >> 64);
    return lo + static_cast<int>(scaled);
  }

  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<int> permutation(int n) {
    std::vector<int> p(n);
    for (int i = 0; i < n; ++i) p[i] = i;
    for (int i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(0, i)]);
    return p;
  }

 private:
  std::mt19937_64 engine_;
};

template <typename T = float>
BasicTensor<T> random_uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> values(shape.numel());
  for (T& v : values) v = static_cast<T>(rng.uniform(lo, hi));
  return BasicTensor<T>(shape, std::move(values));
}

}  // namespace rlfn
