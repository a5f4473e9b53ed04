#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace phnn {

inline unsigned hardware_jobs() {
  unsigned n = std::thread::hardware_concurrency();
  return n ? n : 1;
}

namespace detail {
inline thread_local int parallel_depth = 0;
}

// Runs fn(begin, end) over a partition of [0, n). Nested invocations execute
// inline so worker threads never oversubscribe the machine.
template <typename Fn>
void parallel_chunks(std::size_t n, const Fn& fn, unsigned jobs = 0) {
  if (n == 0) return;
  if (jobs == 0) jobs = hardware_jobs();
  if (jobs > n) jobs = static_cast<unsigned>(n);
  if (detail::parallel_depth > 0 || jobs <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(jobs - 1);
  std::exception_ptr first_error;
  std::mutex error_mutex;
  const std::size_t chunk = (n + jobs - 1) / jobs;
  auto run = [&](std::size_t b, std::size_t e) {
    detail::parallel_depth++;
    try {
      fn(b, e);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
    }
    detail::parallel_depth--;
  };
  for (unsigned w = 1; w < jobs; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b >= e) break;
    workers.emplace_back(run, b, e);
  }
  run(0, std::min(n, chunk));
  for (auto& t : workers) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

// Item-level variant: fn(i) for i in [0, n), items distributed in contiguous
// blocks so results stay deterministic regardless of the job count.
template <typename Fn>
void parallel_for(std::size_t n, const Fn& fn, unsigned jobs = 0) {
  parallel_chunks(
      n,
      [&fn](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) fn(i);
      },
      jobs);
}

}  // namespace phnn
