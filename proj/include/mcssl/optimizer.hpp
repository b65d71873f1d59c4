#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcssl/heads.hpp"
#include "mcssl/params.hpp"

namespace mcssl {

// Adaptive-moment optimizer with decoupled weight decay. Weight decay is
// skipped for vectors (biases, norms, the positional table follows common
// practice and is decayed only if 2-d) and applied as theta -= lr * wd * theta.
template <typename T>
class AdamW {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit AdamW(const ParamSet<T>& params)
      : m_(params.zeros_like()), v_(params.zeros_like()) {}

  // Restore from checkpointed state.
  AdamW(ParamSet<T> m, ParamSet<T> v, int64_t t) : m_(std::move(m)), v_(std::move(v)), t_(t) {}

  int64_t steps_taken() const { return t_; }
  const ParamSet<T>& moments_m() const { return m_; }
  const ParamSet<T>& moments_v() const { return v_; }

  void step(ParamSet<T>& params, const ParamSet<T>& grads, double lr, double weight_decay) {
    if (!params.shape_congruent(grads) || !params.shape_congruent(m_))
      throw std::invalid_argument("optimizer_step: parameter/gradient shape mismatch");
    ++t_;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& w = params.tensor(i);
      const Tensor<T>& g = grads.tensor(i);
      Tensor<T>& m = m_.tensor(i);
      Tensor<T>& v = v_.tensor(i);
      bool decay = w.ndim() >= 2 && weight_decay > 0;
      for (int64_t j = 0; j < w.numel(); ++j) {
        double gj = static_cast<double>(g[j]);
        if (!std::isfinite(gj))
          throw std::runtime_error("non-finite gradient in " + params.names()[i] + " at step " +
                                   std::to_string(t_));
        double mj = beta1 * m[j] + (1.0 - beta1) * gj;
        double vj = beta2 * v[j] + (1.0 - beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        double update = (mj / bc1) / (std::sqrt(vj / bc2) + eps);
        double wj = static_cast<double>(w[j]);
        if (decay) wj -= lr * weight_decay * wj;
        w[j] = static_cast<T>(wj - lr * update);
      }
    }
  }

 private:
  ParamSet<T> m_;
  ParamSet<T> v_;
  int64_t t_ = 0;
};

// Global-norm gradient clipping; returns the pre-clip norm.
template <typename T>
double clip_global_norm(ParamSet<T>& grads, double max_norm) {
  double sq = 0;
  for (size_t i = 0; i < grads.size(); ++i) {
    const Tensor<T>& g = grads.tensor(i);
    for (int64_t j = 0; j < g.numel(); ++j) sq += static_cast<double>(g[j]) * g[j];
  }
  double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    T s = static_cast<T>(max_norm / norm);
    for (size_t i = 0; i < grads.size(); ++i) {
      Tensor<T>& g = grads.tensor(i);
      for (int64_t j = 0; j < g.numel(); ++j) g[j] *= s;
    }
  }
  return norm;
}

}  // namespace mcssl
