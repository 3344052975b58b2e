#pragma once

#include <cmath>
#include <vector>

#include "lstrl/error.hpp"
#include "lstrl/tensor.hpp"

namespace lstrl {

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam update with bias correction. Consumes the accumulated
// gradients: each param's grad is reset to zero and its step count advances.
template <typename T>
void adam_step(const std::vector<ParamTensor<T>*>& params, const AdamConfig& cfg) {
  LSTRL_CHECK_CFG(cfg.lr > 0, "adam learning rate must be positive");
  LSTRL_CHECK_CFG(cfg.beta1 >= 0 && cfg.beta1 < 1 && cfg.beta2 >= 0 && cfg.beta2 < 1,
                  "adam betas must lie in [0,1)");
  for (ParamTensor<T>* p : params) {
    p->step_count += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->step_count));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->step_count));
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = static_cast<double>(p->grad.data[i]);
      const double m = cfg.beta1 * static_cast<double>(p->adam_m.data[i]) +
                       (1.0 - cfg.beta1) * g;
      const double v = cfg.beta2 * static_cast<double>(p->adam_v.data[i]) +
                       (1.0 - cfg.beta2) * g * g;
      p->adam_m.data[i] = static_cast<T>(m);
      p->adam_v.data[i] = static_cast<T>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      p->value.data[i] =
          static_cast<T>(static_cast<double>(p->value.data[i]) -
                         cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
      p->grad.data[i] = T(0);
    }
  }
}

}  // namespace lstrl
