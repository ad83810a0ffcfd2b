#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace gtl {

// Runs f(i) for i in [0, n) on up to `threads` workers. Work items must be
// independent; results should be written to per-index slots. If any item
// throws, the exception of the lowest failing index is rethrown after all
// workers finish.
template <class F>
void parallel_for(std::size_t n, std::size_t threads, F&& f) {
  if (n == 0) return;
  threads = std::clamp<std::size_t>(threads, 1, n);
  std::vector<std::exception_ptr> errors(n);
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            f(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace gtl
