#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace hlik {

// Chunked pairwise summation. Partial sums are formed per fixed-size chunk
// (linear within a chunk) and combined by a pairwise tree over chunk index,
// so the result is bit-identical for a fixed chunk size regardless of how
// chunk partials were produced (serially or by worker threads).
inline constexpr std::size_t kReductionChunk = 1024;

double pairwise_combine(std::span<const double> partials);

// Sums f(i) for i in [0, n) with the chunked pairwise contract above.
// Threaded over chunks when n is large and threads > 1.
template <class F>
double chunked_sum(std::size_t n, F&& term, int threads = 1);

double chunked_sum_values(std::span<const double> values, int threads = 1);

// SplitMix64; used to derive per-replicate and per-stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return splitmix64(a ^ (0x9E3779B97F4A7C15ULL + (b << 6) + (b >> 2) + b));
}

class Stopwatch {
 public:
  Stopwatch() : start_(clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(clock::now() - start_).count();
  }
  void reset() { start_ = clock::now(); }

 private:
  using clock = std::chrono::steady_clock;
  clock::time_point start_;
};

int hardware_threads();

// Runs fn(i) for i in [0, n) on `threads` workers. Work is split by atomic
// index; fn must not touch shared mutable state without its own locking.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace hlik

namespace hlik {

template <class F>
double chunked_sum(std::size_t n, F&& term, int threads) {
  const std::size_t nchunks = (n + kReductionChunk - 1) / kReductionChunk;
  std::vector<double> partials(nchunks, 0.0);
  auto do_chunk = [&](std::size_t c) {
    const std::size_t lo = c * kReductionChunk;
    const std::size_t hi = std::min(n, lo + kReductionChunk);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += term(i);
    partials[c] = s;
  };
  if (threads > 1 && nchunks > 1) {
    parallel_for(nchunks, threads, do_chunk);
  } else {
    for (std::size_t c = 0; c < nchunks; ++c) do_chunk(c);
  }
  return pairwise_combine(partials);
}

}  // namespace hlik
