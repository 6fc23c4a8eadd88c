#pragma once

#include <atomic>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace amplab {

namespace detail {

template <typename... Parts>
std::string cat(Parts&&... parts) {
  std::ostringstream os;
  (os << ... << parts);
  return os.str();
}

}  // namespace detail

/// Thrown when an operation is called outside its contract (bad arguments,
/// malformed inputs, invalid actions).
class ContractViolation : public std::invalid_argument {
 public:
  explicit ContractViolation(const std::string& what) : std::invalid_argument(what) {}
};

template <typename... Parts>
[[noreturn]] void fail_contract(Parts&&... parts) {
  throw ContractViolation(detail::cat(std::forward<Parts>(parts)...));
}

template <typename... Parts>
void require(bool condition, Parts&&... parts) {
  if (!condition) fail_contract(std::forward<Parts>(parts)...);
}

/// Runs body(0..n-1) on up to `workers` threads. Work items must be
/// independent; results should be written to preallocated per-index slots so
/// the outcome does not depend on scheduling. Exceptions from workers are
/// rethrown on the calling thread.
inline void parallel_for(int n, int workers, const std::function<void(int)>& body) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  workers = std::min(workers, n);
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace amplab
