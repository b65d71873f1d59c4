#pragma once

#include <stdexcept>

#include "mcssl/params.hpp"

namespace mcssl {

// phi = lambda * phi + (1 - lambda) * theta, elementwise. The teacher is only
// ever written through this function; it never sees the optimizer.
template <typename T>
void ema_update(ParamSet<T>& teacher, const ParamSet<T>& student, T lambda) {
  if (lambda < T(0) || lambda > T(1)) throw std::invalid_argument("lambda must be in [0, 1]");
  if (!teacher.shape_congruent(student))
    throw std::invalid_argument("ema_update: parameter sets are not shape-congruent");
  for (size_t i = 0; i < teacher.size(); ++i) {
    Tensor<T>& phi = teacher.tensor(i);
    const Tensor<T>& theta = student.tensor(i);
    for (int64_t j = 0; j < phi.numel(); ++j) phi[j] = lambda * phi[j] + (T(1) - lambda) * theta[j];
  }
}

}  // namespace mcssl
