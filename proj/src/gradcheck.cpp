#include "gkd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gkd::ad {

GradCheckResult grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double eps) {
  for (Tensor& p : params) {
    if (!p.is_leaf() || !p.requires_grad()) throw std::invalid_argument("grad_check: params must be parameter leaves");
    p.zero_grad();
  }
  Tensor loss = f();
  backward(loss);
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) analytic.push_back(p.grad());

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& value = params[k].leaf_value();
    for (Index i = 0; i < value.rows(); ++i) {
      for (Index j = 0; j < value.cols(); ++j) {
        const Scalar saved = value(i, j);
        value(i, j) = saved + eps;
        const Scalar up = f().item();
        value(i, j) = saved - eps;
        const Scalar down = f().item();
        value(i, j) = saved;
        const Scalar numeric = (up - down) / (2.0 * eps);
        const Scalar a = analytic[k](i, j);
        if (!std::isfinite(a) || !std::isfinite(numeric)) {
          std::ostringstream msg;
          msg << "non-finite gradient at param " << k << " (" << i << ", " << j << "): analytic " << a
              << ", numeric " << numeric;
          result.finite = false;
          result.param = k;
          result.row = i;
          result.col = j;
          result.message = msg.str();
          return result;
        }
        const Scalar err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        if (err > result.max_rel_error) {
          result.max_rel_error = err;
          result.param = k;
          result.row = i;
          result.col = j;
        }
      }
    }
  }
  for (Tensor& p : params) p.zero_grad();
  return result;
}

}  // namespace gkd::ad
