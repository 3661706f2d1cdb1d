#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "onix/nn/tensor.hpp"

namespace onix::nn {

/// Adam optimizer state: per-parameter first/second moments plus the step
/// counter used for bias correction.
template <typename T>
struct AdamState {
  std::int64_t step = 0;
  T lr = T(0.005);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
  std::map<std::string, Tensor<T>> first_moment;
  std::map<std::string, Tensor<T>> second_moment;

  static AdamState init(const ParamStore<T>& store, T lr = T(0.005)) {
    AdamState s;
    s.lr = lr;
    for (const auto& [name, p] : store.params) {
      s.first_moment[name] = Tensor<T>::zeros(p.shape);
      s.second_moment[name] = Tensor<T>::zeros(p.shape);
    }
    return s;
  }
};

/// One Adam update with bias correction; consumes and zeroes the gradients.
template <typename T>
void adam_step(ParamStore<T>& store, AdamState<T>& state) {
  state.step += 1;
  const T bc1 = T(1) - std::pow(state.beta1, static_cast<T>(state.step));
  const T bc2 = T(1) - std::pow(state.beta2, static_cast<T>(state.step));
  for (auto& [name, p] : store.params) {
    auto git = store.grads.find(name);
    if (git == store.grads.end())
      throw std::invalid_argument("adam_step: missing gradient for " + name);
    auto& m = state.first_moment.at(name);
    auto& v = state.second_moment.at(name);
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const T g = store.grad_at(name, i);
      m.data[i] = state.beta1 * m.data[i] + (T(1) - state.beta1) * g;
      v.data[i] = state.beta2 * v.data[i] + (T(1) - state.beta2) * g * g;
      const T mhat = m.data[i] / bc1;
      const T vhat = v.data[i] / bc2;
      p.data[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
  store.zero_grad();
}

}  // namespace onix::nn
