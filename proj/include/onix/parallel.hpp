#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <thread>
#include <vector>

namespace onix {

/// Process-wide worker count. 1 (the default) runs everything inline.
inline std::atomic<int>& worker_count() {
  static std::atomic<int> n{1};
  return n;
}

inline void set_workers(int n) { worker_count().store(n < 1 ? 1 : n); }
inline int workers() { return worker_count().load(); }

/// Static-chunk parallel loop: worker w handles the contiguous index range
/// [w*chunk, min((w+1)*chunk, n)). The partition depends only on (n, workers),
/// so pure per-index work gives run-to-run identical results for a fixed
/// worker count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn, int nworkers = 0) {
  if (nworkers <= 0) nworkers = workers();
  if (n <= 0) return;
  if (nworkers == 1 || n == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  const int used = static_cast<int>(std::min<std::int64_t>(nworkers, n));
  const std::int64_t chunk = (n + used - 1) / used;
  std::vector<std::thread> pool;
  pool.reserve(used);
  for (int w = 0; w < used; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min<std::int64_t>(lo + chunk, n);
    pool.emplace_back([lo, hi, w, &fn] {
      for (std::int64_t i = lo; i < hi; ++i) fn(i, w);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace onix
