#include "symcov/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "symcov/errors.hpp"

namespace symcov {

const char* to_string(InputErrorKind kind) noexcept {
  switch (kind) {
    case InputErrorKind::Schema: return "schema";
    case InputErrorKind::Parse: return "parse";
    case InputErrorKind::EmptyInput: return "empty-input";
    case InputErrorKind::Domain: return "domain";
    case InputErrorKind::Dimension: return "dimension";
    case InputErrorKind::InvalidArgument: return "invalid-argument";
  }
  return "unknown";
}

unsigned resolve_threads(int requested) noexcept {
  if (requested > 0) return static_cast<unsigned>(requested);
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, unsigned threads,
                  const std::function<void(std::size_t)>& body) {
  if (count == 0) return;
  const auto workers = static_cast<std::size_t>(std::max(1u, threads));
  if (workers == 1 || count == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  const std::size_t spawned = std::min(workers, count) - 1;
  pool.reserve(spawned);
  for (std::size_t w = 0; w < spawned; ++w) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace symcov
