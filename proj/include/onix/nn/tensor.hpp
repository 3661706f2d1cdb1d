#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace onix::nn {

/// Dense row-major tensor. T is double in reference mode, float in the
/// reduced-precision mode.
template <typename T>
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<T> data;

  Tensor() = default;

  static Tensor zeros(std::vector<std::int64_t> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(static_cast<std::size_t>(numel_of(t.shape)), T(0));
    return t;
  }

  static Tensor full(std::vector<std::int64_t> s, T v) {
    Tensor t = zeros(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  T& at2(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
  T at2(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * shape[1] + j)]; }
  T& at3(std::int64_t c, std::int64_t h, std::int64_t w) {
    return data[static_cast<std::size_t>((c * shape[1] + h) * shape[2] + w)];
  }
  T at3(std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data[static_cast<std::size_t>((c * shape[1] + h) * shape[2] + w)];
  }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
  }
};

template <typename T>
[[noreturn]] void shape_mismatch(const std::string& op, const Tensor<T>& a, const Tensor<T>& b) {
  throw std::invalid_argument(op + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

/// Named parameters with mirrored gradients. Cross-graph gradient
/// accumulation uses Neumaier-compensated summation so the result is
/// independent of accumulation order to within a couple of ulps.
template <typename T>
struct ParamStore {
  std::map<std::string, Tensor<T>> params;
  std::map<std::string, Tensor<T>> grads;
  std::map<std::string, Tensor<T>> comp;  // summation compensation terms

  void add(const std::string& name, Tensor<T> value) {
    if (params.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    grads[name] = Tensor<T>::zeros(value.shape);
    comp[name] = Tensor<T>::zeros(value.shape);
    params[name] = std::move(value);
  }

  bool has(const std::string& name) const { return params.count(name) != 0; }

  Tensor<T>& param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return it->second;
  }
  const Tensor<T>& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return it->second;
  }

  void zero_grad() {
    for (auto& [name, g] : grads) std::fill(g.data.begin(), g.data.end(), T(0));
    for (auto& [name, c] : comp) std::fill(c.data.begin(), c.data.end(), T(0));
  }

  /// Compensated elementwise accumulation of one gradient contribution.
  void accumulate_grad(const std::string& name, const Tensor<T>& g) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("ParamStore: gradient for unknown " + name);
    Tensor<T>& sum = it->second;
    Tensor<T>& c = comp[name];
    if (!sum.same_shape(g)) shape_mismatch("accumulate_grad", sum, g);
    for (std::size_t i = 0; i < sum.data.size(); ++i) {
      const T x = g.data[i];
      const T s = sum.data[i];
      const T t = s + x;
      c.data[i] += (std::abs(s) >= std::abs(x)) ? (s - t) + x : (x - t) + s;
      sum.data[i] = t;
    }
  }

  /// Gradient including the compensation term.
  T grad_at(const std::string& name, std::size_t i) const {
    return grads.at(name).data[i] + comp.at(name).data[i];
  }

  std::int64_t total_params() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : params) n += p.numel();
    return n;
  }
};

}  // namespace onix::nn
