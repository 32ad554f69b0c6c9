#pragma once

#include <string>
#include <vector>

#include "karma/gradcheck.hpp"

namespace karma {

struct GradSuiteEntry {
  std::string module;
  std::string name;
  double tolerance = 1e-5;
  GradCheckResult result;
  bool passed() const { return result.probes > 0 && result.max_rel_error < tolerance; }
};

/// "tensor", "spline", "kan", "backbone", "losses", "model".
std::vector<std::string> gradient_suite_modules();

/// Finite-difference checks of every differentiable operation (tolerance
/// 1e-5) and of the full KARMA network at 64x64, K = 3, on sampled
/// parameters (tolerance 1e-4). `module` is one of the names above or "all".
std::vector<GradSuiteEntry> run_gradient_suite(const std::string& module);

}  // namespace karma
