#include "sarc/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sarc {

std::vector<GradCheckReport> grad_check(
    const std::function<double(const ParamMap&)>& loss,
    const ParamMap& params,
    const ParamMap& analytic_grads,
    double epsilon,
    double tolerance) {
  if (epsilon < 1e-7 || epsilon > 1e-4) {
    throw std::invalid_argument("grad_check: epsilon must be in [1e-7, 1e-4]");
  }
  const double base = loss(params);
  if (!std::isfinite(base)) {
    throw NumericalError("grad_check: loss is not finite at the supplied parameters");
  }

  ParamMap work = params;
  std::vector<GradCheckReport> reports;
  reports.reserve(params.size());

  for (const auto& [name, tensor] : params) {
    auto grad_it = analytic_grads.find(name);
    if (grad_it == analytic_grads.end()) {
      throw std::invalid_argument("grad_check: no analytic gradient for parameter " + name);
    }
    const Tensor& analytic = grad_it->second;
    if (!analytic.same_shape(tensor)) {
      throw ShapeError("grad_check: gradient shape " + shape_string(analytic.shape()) +
                       " does not match parameter " + name + " " + shape_string(tensor.shape()));
    }

    GradCheckReport report{name, 0.0, epsilon, false};
    Tensor& t = work.at(name);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double saved = t.at(i);
      t.at(i) = saved + epsilon;
      const double plus = loss(work);
      t.at(i) = saved - epsilon;
      const double minus = loss(work);
      t.at(i) = saved;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NumericalError("grad_check: non-finite loss while perturbing " + name +
                             " entry " + std::to_string(i));
      }
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double a = analytic.at(i);
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      report.max_relative_error = std::max(report.max_relative_error, rel);
    }
    report.passed = report.max_relative_error <= tolerance;
    reports.push_back(std::move(report));
  }
  return reports;
}

bool all_passed(const std::vector<GradCheckReport>& reports) {
  return std::all_of(reports.begin(), reports.end(),
                     [](const GradCheckReport& r) { return r.passed; });
}

}  // namespace sarc
