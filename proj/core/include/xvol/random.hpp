#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "xvol/tensor.hpp"

namespace xvol {

/// Seeded generator shared by tests, the harness and the benchmarks.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  Tensor4 normal_tensor(Dims d, double stddev = 1.0) {
    Tensor4 t(d);
    for (auto& v : t.data()) v = static_cast<float>(normal(0.0, stddev));
    return t;
  }
  Tensor4 uniform_tensor(Dims d, double lo, double hi) {
    Tensor4 t(d);
    for (auto& v : t.data()) v = static_cast<float>(uniform(lo, hi));
    return t;
  }
  std::vector<float> normal_vector(int count, double mean = 0.0, double stddev = 1.0) {
    std::vector<float> v(static_cast<std::size_t>(count));
    for (auto& e : v) e = static_cast<float>(normal(mean, stddev));
    return v;
  }
  std::vector<float> uniform_vector(int count, double lo, double hi) {
    std::vector<float> v(static_cast<std::size_t>(count));
    for (auto& e : v) e = static_cast<float>(uniform(lo, hi));
    return v;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace xvol
