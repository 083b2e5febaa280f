#pragma once

#include "excel/qr_core.hpp"
#include "excel/random.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace excel {

// 0 means one worker per hardware thread.
int resolve_threads(int requested);

// Runs body(i) for i in [0, count) on up to `threads` workers. Work is handed
// out by index, so the caller gets schedule-independent results as long as
// body(i) writes only to slot i. The exception of the lowest failing index is
// rethrown after all workers stop.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body);

// n row indices drawn uniformly with replacement.
std::vector<std::size_t> draw_rows(std::size_t n, Philox gen);

struct ReplicateRun {
  Matrix estimates;                      // successful replicates, in replicate order
  std::vector<std::size_t> replicate_ids;  // replicate index of each estimates row
  std::size_t redrawn = 0;               // replicates that needed the second draw
  std::size_t failed = 0;                // replicates that failed both draws
};

struct ReplicateOptions {
  int threads = 1;
  double max_failure_share = 0.05;
};

// Nonparametric bootstrap driver. Replicate b resamples with the stream
// (seed, tags..., b); a replicate whose fit throws a numerical error is
// redrawn once from (seed, redraw tag, tags..., b). More than
// max_failure_share of failed replicates raises ResampleInstability.
// fit(rows) must return a vector of length dim.
ReplicateRun run_replicates(std::size_t n, std::size_t B, std::uint64_t seed, const std::vector<std::uint64_t>& tags,
                            std::size_t dim, const std::function<Vector(const std::vector<std::size_t>&)>& fit,
                            const ReplicateOptions& options = {});

}  // namespace excel
