#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <thread>
#include <vector>

#include "cfeval/error.hpp"

namespace cfeval {

// Neumaier-compensated accumulator. All per-sample reductions in this library
// run through one of these in a fixed index order so results are bit-identical
// across runs and thread counts.
class KahanSum {
 public:
  void add(double x) {
    double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double kahan_total(std::span<const double> xs) {
  KahanSum s;
  for (double x : xs) s.add(x);
  return s.value();
}

// Argmax with ties broken toward the lowest index.
inline std::size_t argmax(std::span<const double> xs) {
  require(!xs.empty(), Errc::empty_input, "argmax of empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[best]) best = i;
  return best;
}

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

namespace detail {
inline int& thread_cap_override() {
  static int cap = -1;  // -1: defer to CFEVAL_THREADS
  return cap;
}
}  // namespace detail

// 0 means auto (hardware concurrency); -1 restores the environment setting.
inline void set_thread_cap(int cap) { detail::thread_cap_override() = cap; }

inline unsigned worker_count() {
  int cap = detail::thread_cap_override();
  if (cap < 0) {
    if (const char* env = std::getenv("CFEVAL_THREADS")) cap = std::atoi(env);
  }
  if (cap <= 0) return std::max(1u, std::thread::hardware_concurrency());
  return std::min(static_cast<unsigned>(cap), 256u);  // oversubscription is allowed
}

// Chunked parallel loop. Each index writes only its own output slot, so the
// result is independent of the partitioning and of the worker count. The
// first exception thrown by any chunk is rethrown after all threads join.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
  unsigned workers = worker_count();
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  workers = std::min<unsigned>(workers, static_cast<unsigned>(n));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::mutex err_mutex;
  std::exception_ptr err;
  std::size_t chunk = (n + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace cfeval
