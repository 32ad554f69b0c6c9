#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "karma/tensor.hpp"

namespace karma {

struct GradCheckOptions {
  double step = 1e-5;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-4;
  // Coordinates probed per input; 0 probes all of them.
  std::size_t samples_per_input = 0;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::string worst;  // "input#k[i] analytic=.. numeric=.."
};

/// Compares reverse-mode gradients of `fn` against central differences.
/// Non-scalar outputs are reduced to sum(out * R) with a fixed random R.
/// Inputs are leaves; they are switched to requires_grad for the check.
GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& fn,
                          std::vector<Tensor> inputs, const GradCheckOptions& opt = {});

/// Uniform values in [lo, hi) from a splitmix64 stream.
Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = false);

}  // namespace karma
