#pragma once

// Only available in double precision (scnn_core_f64); include from a
// translation unit compiled with SCNN_DOUBLE.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "scnn/real.hpp"

#if !defined(SCNN_DOUBLE)
#error "gradcheck_suite.hpp requires SCNN_DOUBLE"
#endif

SCNN_NAMESPACE_BEGIN

struct KernelCheck {
  std::string name;
  double max_rel_error = 0;
  double threshold = 0;
  std::size_t seeds = 0;

  bool passed() const { return max_rel_error < threshold; }
};

struct GradcheckOptions {
  std::size_t seeds = 10;
  std::uint64_t base_seed = 0;
  double threshold = 1e-3;
};

/// Finite-difference check of every differentiable kernel, each manipulator
/// pipeline, the embedded net and the end-to-end synthesis loss.
std::vector<KernelCheck> run_gradcheck_suite(const GradcheckOptions& options = {});

SCNN_NAMESPACE_END
