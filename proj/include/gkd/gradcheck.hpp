#pragma once

#include "gkd/autodiff.hpp"

#include <functional>
#include <string>
#include <vector>

namespace gkd::ad {

struct GradCheckResult {
  double max_rel_error = 0.0;
  bool finite = true;
  // Location of the worst (or first non-finite) coordinate.
  std::size_t param = 0;
  Index row = 0;
  Index col = 0;
  std::string message;

  bool passed(double tol) const { return finite && max_rel_error < tol; }
};

/// Compares the analytic gradient of `f` with central differences
/// (f(p + eps) - f(p - eps)) / (2 eps), entry by entry over `params`.
/// The relative error of an entry is |a - n| / max(1, |a|, |n|).
/// `f` must rebuild its graph from the current parameter values on each call
/// and be deterministic.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps = 1e-5);

}  // namespace gkd::ad
