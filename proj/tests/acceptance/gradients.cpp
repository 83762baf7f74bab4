#include <chrono>
#include <cstdio>

#include "criteria.hpp"
#include "scnn/gradcheck_suite.hpp"

CriterionResult check_gradient_suite() {
  const auto start = std::chrono::steady_clock::now();
  scnn::GradcheckOptions options;
  options.seeds = 10;
  options.threshold = 1e-3;
  const auto checks = scnn::run_gradcheck_suite(options);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  bool ok = !checks.empty();
  double worst = 0;
  std::string worst_name;
  for (const auto& c : checks) {
    std::printf("    %-28s %.3e\n", c.name.c_str(), c.max_rel_error);
    ok = ok && c.passed() && c.seeds == options.seeds;
    if (c.max_rel_error >= worst) {
      worst = c.max_rel_error;
      worst_name = c.name;
    }
  }
  ok = ok && seconds < 120;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu kernels x %zu seeds, worst %.3e (%s) < 1e-3, %.1f s < 120 s", checks.size(),
                options.seeds, worst, worst_name.c_str(), seconds);
  return {"C1 gradient suite", ok, buf};
}
