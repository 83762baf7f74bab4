#include <cstdio>

#include "commands.hpp"
#include "scnn/gradcheck_suite.hpp"

int run_gradcheck(const GradcheckArgs& args) {
  scnn::GradcheckOptions options;
  options.seeds = args.seeds;
  options.threshold = args.threshold;
  options.base_seed = args.seed;
  bool ok = true;
  for (const auto& check : scnn::run_gradcheck_suite(options)) {
    std::printf("%-28s max_rel_error=%.3e threshold=%.1e %s\n", check.name.c_str(), check.max_rel_error,
                check.threshold, check.passed() ? "PASS" : "FAIL");
    ok = ok && check.passed();
  }
  return ok ? kExitOk : kExitFailure;
}
