#include "excel/replicate.hpp"

#include "excel/error.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>

namespace excel {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(resolve_threads(threads)), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex guard;
  std::size_t failed_index = count;
  std::exception_ptr failure;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count || stop.load()) return;
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(guard);
        if (i < failed_index) {
          failed_index = i;
          failure = std::current_exception();
        }
        stop = true;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<std::size_t> draw_rows(std::size_t n, Philox gen) {
  Sampler sampler(gen);
  std::vector<std::size_t> rows(n);
  for (auto& r : rows) r = static_cast<std::size_t>(sampler.index(n));
  return rows;
}

namespace {

bool retryable(const Error& e) {
  return category_of(e.code()) == ErrorCategory::Numerical && e.code() != ErrorCode::ResampleInstability;
}

}  // namespace

ReplicateRun run_replicates(std::size_t n, std::size_t B, std::uint64_t seed, const std::vector<std::uint64_t>& tags,
                            std::size_t dim, const std::function<Vector(const std::vector<std::size_t>&)>& fit,
                            const ReplicateOptions& options) {
  if (B == 0) throw Error(ErrorCode::InvalidArgument, "bootstrap needs at least one replicate");
  enum class Outcome { Ok, Redrawn, Failed };
  std::vector<std::optional<Vector>> slots(B);
  std::vector<Outcome> outcomes(B, Outcome::Ok);

  parallel_for(B, options.threads, [&](std::size_t b) {
    std::vector<std::uint64_t> key(tags);
    key.push_back(b);
    try {
      slots[b] = fit(draw_rows(n, Philox::stream(seed, key)));
      return;
    } catch (const Error& e) {
      if (!retryable(e)) throw;
    }
    key.insert(key.begin(), stream_tag::kBootstrapRedraw);
    try {
      slots[b] = fit(draw_rows(n, Philox::stream(seed, key)));
      outcomes[b] = Outcome::Redrawn;
    } catch (const Error& e) {
      if (!retryable(e)) throw;
      outcomes[b] = Outcome::Failed;
    }
  });

  ReplicateRun run;
  for (std::size_t b = 0; b < B; ++b) {
    if (outcomes[b] == Outcome::Failed) ++run.failed;
    if (outcomes[b] == Outcome::Redrawn) ++run.redrawn;
  }
  if (static_cast<double>(run.failed) > options.max_failure_share * static_cast<double>(B)) {
    throw Error(ErrorCode::ResampleInstability, std::to_string(run.failed) + " of " + std::to_string(B) +
                                                    " bootstrap replicates failed after a redraw");
  }
  run.estimates.resize(static_cast<Eigen::Index>(B - run.failed), static_cast<Eigen::Index>(dim));
  Eigen::Index row = 0;
  for (std::size_t b = 0; b < B; ++b) {
    if (!slots[b]) continue;
    if (slots[b]->size() != static_cast<Eigen::Index>(dim))
      throw Error(ErrorCode::DimensionMismatch, "replicate estimate has the wrong length");
    run.estimates.row(row++) = slots[b]->transpose();
    run.replicate_ids.push_back(b);
  }
  return run;
}

}  // namespace excel
