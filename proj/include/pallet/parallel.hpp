#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace pallet {

inline unsigned default_jobs() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Runs fn(i) for i in [0, n). Work is split into fixed-size chunks claimed by
// an atomic counter; fn(i) must not depend on which worker runs it, so the
// result is identical for any job count.
inline void parallel_for(std::size_t n, unsigned jobs,
                         const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  if (jobs <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  if (jobs > n) jobs = static_cast<unsigned>(n);

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) break;
      fn(i);
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(jobs - 1);
  for (unsigned t = 1; t < jobs; ++t) threads.emplace_back(worker);
  worker();
  for (auto& th : threads) th.join();
}

// Deterministic parallel reduction: items are assigned to a fixed number of
// buckets by index (independent of the job count), each bucket accumulates
// sequentially in index order, and buckets are merged in bucket order. The
// floating-point result therefore does not vary with --jobs.
inline constexpr std::size_t kReduceBuckets = 8;

template <typename Acc>
void parallel_reduce(std::size_t n, unsigned jobs,
                     const std::function<void(std::size_t, Acc&)>& accumulate,
                     std::vector<Acc>& buckets) {
  buckets.clear();
  buckets.resize(kReduceBuckets);
  if (n == 0) return;
  parallel_for(kReduceBuckets, jobs, [&](std::size_t b) {
    for (std::size_t i = b; i < n; i += kReduceBuckets) {
      accumulate(i, buckets[b]);
    }
  });
}

}  // namespace pallet
