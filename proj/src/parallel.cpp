#include "bevrefine/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bevrefine {

#ifdef _OPENMP
namespace {
int default_workers() {
    static const int n = omp_get_max_threads();
    return n;
}
}  // namespace

int worker_count() {
    default_workers();
    return omp_get_max_threads();
}

void set_worker_count(int n) {
    omp_set_num_threads(n > 0 ? n : default_workers());
}
#else
int worker_count() { return 1; }
void set_worker_count(int) {}
#endif

}  // namespace bevrefine
