#include "relight/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace relight {
namespace {

int threads_from_env() {
  const char* env = std::getenv("RELIGHT_THREADS");
  if (env == nullptr) return 0;
  return std::max(0, std::atoi(env));
}

std::atomic<int>& configured_threads() {
  static std::atomic<int> threads{threads_from_env()};
  return threads;
}

}  // namespace

void set_thread_count(int threads) { configured_threads() = std::max(0, threads); }

int thread_count() {
  int n = configured_threads();
  if (n == 0) n = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return n;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn,
                  std::int64_t min_per_thread) {
  if (n <= 0) return;
  const std::int64_t workers =
      std::min<std::int64_t>(thread_count(), std::max<std::int64_t>(1, n / std::max<std::int64_t>(1, min_per_thread)));
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::jthread> pool;
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (std::int64_t w = 0; w < workers; ++w) {
    const std::int64_t begin = w * chunk;
    const std::int64_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        for (std::int64_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  pool.clear();
  if (error) std::rethrow_exception(error);
}

}  // namespace relight
