#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hawk::detail {

/// Runs fn(begin, end) over contiguous chunks of [0, n) on up to `threads`
/// threads and rethrows the first exception.
template <class Fn>
void parallel_chunks(std::uint64_t n, int threads, Fn&& fn) {
  const auto t = static_cast<std::uint64_t>(std::max(1, threads));
  if (t <= 1 || n < 2) {
    fn(std::uint64_t{0}, n);
    return;
  }
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  const std::uint64_t chunk = (n + t - 1) / t;
  for (std::uint64_t b = 0; b < n; b += chunk) {
    const std::uint64_t e = std::min(n, b + chunk);
    pool.emplace_back([&, b, e] {
      try {
        fn(b, e);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace hawk::detail
