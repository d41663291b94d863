#pragma once

#include <cstdint>
#include <functional>

namespace eapnet {

// Worker count for kernel-internal data parallelism. Defaults to the
// hardware concurrency; EAPNET_THREADS overrides it. Results are
// independent of the thread count: each output element is written by
// exactly one worker and accumulated in a fixed order.
void set_num_threads(int n);
int num_threads();

// Runs fn(begin, end) over disjoint chunks of [begin, end). Falls back to a
// single inline call when the range is small or one thread is configured.
void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t, int64_t)>& fn);

}  // namespace eapnet
