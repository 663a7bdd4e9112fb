#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ckd/tensor.hpp"

namespace ckd {

// Compares the analytic gradient of a scalar-valued f at x against central
// finite differences. Returns the max over coordinates of
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
// f must be smooth at x: keep inputs away from the kinks of piecewise ops.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps = 1e-6);

struct GradCheckResult {
  std::string name;
  double max_rel_error;
};

// Exercises every core op plus a 1-layer LIF network on its surrogate path
// (smooth spike forward, so the surrogate backward is exactly the derivative
// being differenced). `seeds` random draws per op.
std::vector<GradCheckResult> run_grad_check_suite(std::size_t seeds = 10);

}  // namespace ckd
