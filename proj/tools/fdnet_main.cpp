#include <fdnet/cli.hpp>

#include <malloc.h>

int main(int argc, char** argv) {
  fdn::cli::select_blas_core(argv);
  // Large tensor buffers churn every training step; keep freed blocks in the
  // heap instead of handing them back to the kernel.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  std::vector<std::string> args(argv + 1, argv + argc);
  return fdn::cli::run(std::move(args));
}
