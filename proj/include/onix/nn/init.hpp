#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "onix/nn/tensor.hpp"
#include "onix/rng.hpp"

namespace onix::nn {

/// Glorot/Xavier uniform init: U(-a, a) with a = sqrt(6/(fan_in+fan_out)).
template <typename T>
Tensor<T> glorot_uniform(std::vector<std::int64_t> shape, std::int64_t fan_in,
                         std::int64_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor<T> t = Tensor<T>::zeros(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-a, a));
  return t;
}

}  // namespace onix::nn
