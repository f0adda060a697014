#include "contconv/cli.hpp"

#include <iostream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Training allocates the same large temporaries every step; keeping them on
  // the heap instead of fresh mmaps avoids page-faulting them in each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return contconv::run_cli(argc, argv, std::cout, std::cerr);
}
