#pragma once

#include <cmath>
#include <functional>

#include "mcssl/params.hpp"

namespace mcssl {

// Central-difference gradient verification. `forward` evaluates the scalar
// loss for the current parameter values; `analytic` is the gradient under
// test. Relative error uses max(|a|, |n|, floor) as the denominator.
template <typename T>
double gradcheck_max_rel_error(ParamSet<T>& params,
                               const std::function<double()>& forward,
                               const ParamSet<T>& analytic, double h = 1e-5,
                               double floor_denom = 1e-6) {
  double worst = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& w = params.tensor(i);
    const Tensor<T>& g = analytic.tensor(i);
    for (int64_t j = 0; j < w.numel(); ++j) {
      T keep = w[j];
      w[j] = keep + static_cast<T>(h);
      double fp = forward();
      w[j] = keep - static_cast<T>(h);
      double fm = forward();
      w[j] = keep;
      double numeric = (fp - fm) / (2.0 * h);
      double a = static_cast<double>(g[j]);
      double denom = std::max({std::fabs(a), std::fabs(numeric), floor_denom});
      double rel = std::fabs(a - numeric) / denom;
      if (rel > worst) worst = rel;
    }
  }
  return worst;
}

}  // namespace mcssl
