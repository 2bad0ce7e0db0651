#pragma once

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace expertforge {

using NodeId = std::int32_t;
using Mask = std::vector<std::uint8_t>;

/// Bad user input: malformed files, invalid configs, incompatible options.
/// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A documented invariant was violated at runtime (corrupt data, divergence,
/// inconsistent report fields). The CLI maps this to exit code 3.
struct InvariantError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::size_t mask_count(const Mask& m) {
  std::size_t c = 0;
  for (auto v : m) c += (v != 0);
  return c;
}

inline Mask mask_and(const Mask& a, const Mask& b) {
  if (a.size() != b.size()) throw InvariantError("mask size mismatch");
  Mask out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] && b[i];
  return out;
}

inline Mask mask_or(const Mask& a, const Mask& b) {
  if (a.size() != b.size()) throw InvariantError("mask size mismatch");
  Mask out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] || b[i];
  return out;
}

/// Shortest round-trip decimal rendering; the one formatter used for every
/// float written to CSV/TOML-adjacent text so replays are byte-stable.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Worker cap shared by run_suite and evaluate_assignment.
/// EXPERTFORGE_THREADS, when set, bounds whatever the caller requested.
inline int effective_workers(int requested) {
  int n = requested > 0 ? requested : 1;
  if (const char* env = std::getenv("EXPERTFORGE_THREADS")) {
    char* end = nullptr;
    long cap = std::strtol(env, &end, 10);
    if (end != env && cap > 0 && cap < n) n = static_cast<int>(cap);
  }
  unsigned hw = std::thread::hardware_concurrency();
  if (hw > 0 && n > static_cast<int>(hw)) n = static_cast<int>(hw);
  return n;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Results must be
/// written to preallocated slots by the callable; completion order is
/// irrelevant to the output, which keeps concurrent suites replayable.
template <typename Fn>
void parallel_for_index(std::size_t n, int workers, Fn&& fn) {
  workers = effective_workers(workers);
  if (n == 0) return;
  if (workers <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto body = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  int spawn = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  pool.reserve(spawn);
  for (int t = 0; t < spawn; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace expertforge
