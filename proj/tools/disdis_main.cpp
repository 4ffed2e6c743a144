#include "disdis/harness.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

int main(int argc, char** argv) {
#if defined(__GLIBC__)
    // Decoder activations are large and short-lived; keep them on the heap
    // instead of paying for an mmap/munmap pair per temporary.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    return disdis::run_cli(argc, argv);
}
