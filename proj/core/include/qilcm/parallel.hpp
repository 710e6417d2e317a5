#pragma once

#include <cstddef>
#include <cstdlib>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

namespace qilcm {

/// Worker count from an explicit request, the QILCM_THREADS environment
/// variable, or hardware concurrency, in that order. Always >= 1.
inline std::size_t resolve_threads(std::size_t requested) {
  if (requested >= 1) return requested;
  if (const char* env = std::getenv("QILCM_THREADS")) {
    const long n = std::strtol(env, nullptr, 10);
    if (n >= 1) return static_cast<std::size_t>(n);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw >= 1 ? hw : 1;
}

/// Run fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// processed exactly once; callers get determinism by writing only to
/// slot i and reducing sequentially afterwards. Exceptions are rethrown
/// on the calling thread.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  threads = std::min(threads == 0 ? std::size_t{1} : threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  workers.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace qilcm
