#ifndef VSEG_PARALLEL_HPP
#define VSEG_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace vseg {

/// Splits [0, n) into `workers` contiguous chunks and runs fn(worker, begin, end)
/// on each. The partition depends only on (n, workers), so per-worker results
/// reduced in worker order are reproducible. workers <= 1 runs inline.
template <typename Fn>
void parallel_chunks(std::size_t workers, std::size_t n, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers <= 1) {
    if (n > 0) fn(std::size_t{0}, std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = n * w / workers;
    const std::size_t end = n * (w + 1) / workers;
    pool.emplace_back([&, w, begin, end] {
      try {
        fn(w, begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace vseg

#endif  // VSEG_PARALLEL_HPP
