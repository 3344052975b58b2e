#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lstrl/tensor.hpp"

namespace lstrl {

struct GradCheckResult {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t entries = 0;
  bool pass = true;
  std::string worst_param;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  double rel_tol = 1e-4;
  // An entry passes when either bound holds; the absolute floor covers
  // near-zero gradients where a relative measure is meaningless.
  double abs_tol = 1e-8;
  // A perturbation that straddles a ReLU/hinge kink makes the central
  // difference wrong by O(1) regardless of the analytic gradient. Entries
  // failing at `epsilon` are re-measured at this step; a genuinely wrong
  // gradient keeps failing, a kink straddle shrinks away. 0 disables.
  double refine_epsilon = 1e-7;
  // Test hook: scales every analytic gradient to force a visible failure.
  double corrupt_factor = 1.0;
};

// Central-difference check of d(loss)/d(param) for a scalar-valued function.
// `loss_fn(with_grad)` must evaluate the loss from the current param values;
// when `with_grad` it must also accumulate analytic gradients into the params
// (which arrive zeroed).
template <typename T>
GradCheckResult check_gradients(const std::vector<ParamTensor<T>*>& params,
                                const std::function<double(bool)>& loss_fn,
                                const GradCheckOptions& opt = {}) {
  for (auto* p : params) p->zero_grad();
  loss_fn(true);

  std::vector<DenseTensor<T>> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) {
    analytic.push_back(p->grad);
    if (opt.corrupt_factor != 1.0)
      for (auto& g : analytic.back().data) g *= static_cast<T>(opt.corrupt_factor);
  }

  GradCheckResult res;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    ParamTensor<T>& p = *params[pi];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const T saved = p.value.data[i];
      auto central_diff = [&](double eps) {
        p.value.data[i] = saved + static_cast<T>(eps);
        const double up = loss_fn(false);
        p.value.data[i] = saved - static_cast<T>(eps);
        const double down = loss_fn(false);
        p.value.data[i] = saved;
        return (up - down) / (2.0 * eps);
      };

      const double a = static_cast<double>(analytic[pi].data[i]);
      double numeric = central_diff(opt.epsilon);
      double abs_err = std::abs(a - numeric);
      double denom = std::max(std::abs(a), std::abs(numeric));
      double rel_err = denom > 0 ? abs_err / denom : 0.0;
      if (abs_err > opt.abs_tol && rel_err > opt.rel_tol && opt.refine_epsilon > 0) {
        numeric = central_diff(opt.refine_epsilon);
        abs_err = std::abs(a - numeric);
        denom = std::max(std::abs(a), std::abs(numeric));
        rel_err = denom > 0 ? abs_err / denom : 0.0;
      }
      res.entries += 1;
      if (abs_err > res.max_abs_err) res.max_abs_err = abs_err;
      if (abs_err > opt.abs_tol && rel_err > res.max_rel_err) {
        res.max_rel_err = rel_err;
        res.worst_param = p.name + "[" + std::to_string(i) + "]";
      }
      if (abs_err > opt.abs_tol && rel_err > opt.rel_tol) res.pass = false;
    }
  }
  for (auto* p : params) p->zero_grad();
  return res;
}

}  // namespace lstrl
