#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "onix/nn/tensor.hpp"
#include "onix/rng.hpp"

namespace onix::nn {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double mean_rel_err = 0.0;
  int n_checked = 0;
};

/// Compare analytic parameter gradients against central finite differences
/// of a pure forward loss. `loss` must be a deterministic function of the
/// store's parameter values. Relative error uses max(|analytic|, |fd|) as
/// denominator, floored at 1e-10 of the largest analytic component so that
/// genuinely-zero gradients count as exact.
template <typename T, typename LossFn>
GradCheckReport finite_difference_check(ParamStore<T>& store,
                                        const std::map<std::string, Tensor<T>>& analytic,
                                        LossFn&& loss, int n_probes, double h, Rng& rng) {
  // flat index over all parameter elements
  std::vector<std::pair<std::string, std::size_t>> elements;
  for (const auto& [name, p] : store.params)
    for (std::size_t i = 0; i < p.data.size(); ++i) elements.emplace_back(name, i);

  double scale = 0.0;
  for (const auto& [name, g] : analytic)
    for (T v : g.data) scale = std::max(scale, std::abs(static_cast<double>(v)));
  const double floor = std::max(1e-10 * scale, 1e-300);

  GradCheckReport rep;
  double sum = 0.0;
  for (int probe = 0; probe < n_probes; ++probe) {
    const auto& [name, idx] =
        elements[static_cast<std::size_t>(rng.uniform_index(elements.size()))];
    T& slot = store.param(name).data[idx];
    const T saved = slot;
    slot = saved + static_cast<T>(h);
    const double lp = static_cast<double>(loss(store));
    slot = saved - static_cast<T>(h);
    const double lm = static_cast<double>(loss(store));
    slot = saved;
    const double fd = (lp - lm) / (2.0 * h);
    const double an = static_cast<double>(analytic.at(name).data[idx]);
    const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), floor});
    rep.max_rel_err = std::max(rep.max_rel_err, rel);
    sum += rel;
    ++rep.n_checked;
  }
  rep.mean_rel_err = rep.n_checked ? sum / rep.n_checked : 0.0;
  return rep;
}

/// Snapshot of the store's current (compensated) gradients.
template <typename T>
std::map<std::string, Tensor<T>> snapshot_grads(const ParamStore<T>& store) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, g] : store.grads) {
    Tensor<T> t = g;
    const auto& c = store.comp.at(name);
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += c.data[i];
    out[name] = std::move(t);
  }
  return out;
}

}  // namespace onix::nn
