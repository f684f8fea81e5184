#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

namespace mpobm {

/// Worker count: MPOBM_WORKERS if set and positive, else hardware concurrency.
int worker_count();

/// Override for tests; 0 restores the environment/hardware default.
void set_worker_count(int workers);

/// Runs body(i) for i in [0, n). Calls made from inside a worker run serially.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Computes chunk results in parallel waves and folds them strictly in chunk
/// order, so the reduction is bit-identical for any worker count.
template <typename T, typename Compute, typename Combine>
void ordered_reduce(std::size_t n_chunks, Compute&& compute, Combine&& combine) {
  const std::size_t wave = static_cast<std::size_t>(worker_count());
  std::vector<std::optional<T>> slots;
  for (std::size_t start = 0; start < n_chunks; start += wave) {
    const std::size_t count = std::min(wave, n_chunks - start);
    slots.assign(count, std::nullopt);
    parallel_for(count, [&](std::size_t k) { slots[k].emplace(compute(start + k)); });
    for (std::size_t k = 0; k < count; ++k) combine(std::move(*slots[k]));
  }
}

}  // namespace mpobm
