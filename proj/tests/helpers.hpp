#pragma once

#include <cmath>
#include <random>

#include "cts/tensor.hpp"

namespace cts::testing {

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  return (a.data() - b.data()).cwiseAbs().maxCoeff();
}

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  return Tensor::uniform(std::move(shape), lo, hi, rng);
}

}  // namespace cts::testing
