#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dcnas/gradcheck.hpp"
#include "dcnas/ops.hpp"

namespace dcnas::testing {

inline Tensor randn(const Shape& s, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(s);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline Tensor uniform(const Shape& s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(s);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// Scalar probe sum(out * r) with fixed random r so every output entry matters.
inline Var probe(Var out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor r = randn(out.shape(), rng);
  return weighted_sum(out, r);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double fd_error(std::vector<Parameter*> params, const LossBuilder& loss) {
  return check_gradients(params, loss).max_relative_error;
}

}  // namespace dcnas::testing
