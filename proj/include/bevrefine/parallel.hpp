#pragma once

namespace bevrefine {

/// Number of worker threads the grid kernels will use.
int worker_count();

/// Pin the worker count; n <= 0 restores the runtime default. Results are
/// bit-identical across worker counts (cells are independent); this only
/// matters for timing stability.
void set_worker_count(int n);

}  // namespace bevrefine
