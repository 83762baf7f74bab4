#pragma once

#include <string>

struct CriterionResult {
  std::string id;
  bool passed = false;
  std::string detail;
};

// Lives in the double-precision translation unit.
CriterionResult check_gradient_suite();
