#pragma once

#include "sarc/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace sarc {

struct GradCheckReport {
  std::string param_name;
  double max_relative_error = 0.0;
  double epsilon = 0.0;
  bool passed = false;
};

// Central finite differences of `loss` against the caller-supplied analytic
// gradients, one report per parameter tensor. Relative error per entry is
// |a - n| / max(|a|, |n|, 1e-8); a report passes when its max over entries is
// <= tolerance. epsilon must lie in [1e-7, 1e-4]. A non-finite loss anywhere
// aborts with NumericalError naming the parameter and entry.
std::vector<GradCheckReport> grad_check(
    const std::function<double(const ParamMap&)>& loss,
    const ParamMap& params,
    const ParamMap& analytic_grads,
    double epsilon,
    double tolerance);

bool all_passed(const std::vector<GradCheckReport>& reports);

}  // namespace sarc
