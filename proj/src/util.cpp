#include "hlik/util.hpp"

#include <atomic>
#include <mutex>
#include <thread>

namespace hlik {

double pairwise_combine(std::span<const double> partials) {
  if (partials.empty()) return 0.0;
  std::vector<double> level(partials.begin(), partials.end());
  while (level.size() > 1) {
    std::size_t half = level.size() / 2;
    std::vector<double> next;
    next.reserve(half + 1);
    for (std::size_t i = 0; i < half; ++i) next.push_back(level[2 * i] + level[2 * i + 1]);
    if (level.size() % 2) next.push_back(level.back());
    level = std::move(next);
  }
  return level[0];
}

double chunked_sum_values(std::span<const double> values, int threads) {
  return chunked_sum(values.size(), [&](std::size_t i) { return values[i]; }, threads);
}

int hardware_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int nw = static_cast<int>(std::min<std::size_t>(threads, n));
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  workers.reserve(nw);
  std::exception_ptr error;
  std::mutex error_mutex;
  for (int t = 0; t < nw; ++t) {
    workers.emplace_back([&] {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace hlik
