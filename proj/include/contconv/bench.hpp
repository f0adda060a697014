#pragma once

#include "contconv/config.hpp"

#include <vector>

namespace contconv {

struct BenchReport {
  Index points = 0;
  Index neighbor_entries = 0;
  double kdtree_build_ms = 0.0;
  double kdtree_query_ms = 0.0;
  std::vector<double> layer_ms;     // inference forward per layer, fused kernels
  std::vector<double> layer_flops;  // analytic, per layer
  double kernel_unfused_ms = 0.0;   // kernel MLP with batch-norm layers, summed over layers
  double kernel_fused_ms = 0.0;     // the same MLPs with batch-norm folded in
  double fused_speedup = 0.0;       // unfused / fused
  double fused_max_abs_diff = 0.0;  // between the two kernel outputs
};

/// Random cloud in the unit cube and a stack of factorized layers with
/// batch-norm inside the kernel MLP. Timings are the minimum over
/// `repeats` runs.
BenchReport run_bench(const BenchConfig& config, int threads);

}  // namespace contconv
