#pragma once

#include <functional>

namespace lsattn {

// Worker-pool width for batch-parallel loops. Default 1 (fully serial);
// the CLI raises it from LSATTN_THREADS. Parallelized loops only ever write
// disjoint index ranges, so results do not depend on the width.
int thread_width();
void set_thread_width(int n);

// Runs fn(i) for i in [0, n). Serial when thread_width() == 1.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace lsattn
