#pragma once

#include <cmath>
#include <stdexcept>

#include "mcssl/tensor.hpp"

namespace mcssl {

// Plain-tensor forms of the pretraining objectives. The training engine uses
// the fused tape ops for gradients; these are the reference semantics shared
// by diagnostics and the teacher side, computed in double internally.

struct CenterState {
  TensorD center;   // K
  double momentum = 0.9;
};

inline double recon_loss(const TensorF& x, const TensorF& xr, const TensorF* mask = nullptr) {
  if (!x.same_shape(xr)) throw std::invalid_argument("recon_loss: shape mismatch");
  if (mask && mask->numel() != x.numel())
    throw std::invalid_argument("recon_loss: mask size mismatch");
  double acc = 0, denom = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    if (mask && !((*mask)[i] > 0.f)) continue;
    acc += std::fabs(static_cast<double>(x[i]) - xr[i]);
    denom += 1;
  }
  return denom > 0 ? acc / denom : 0.0;
}

// Row-wise softmax of z/tau with max subtraction; rows are tokens, cols are
// the K concepts.
inline TensorD student_probs(const TensorD& z, double tau) {
  if (tau <= 0) throw std::invalid_argument("temperature must be positive");
  int64_t r = z.rows(), c = z.cols();
  TensorD p({r, c});
  for (int64_t i = 0; i < r; ++i) {
    double mx = -1e300;
    for (int64_t j = 0; j < c; ++j) mx = std::max(mx, z.at(i, j) / tau);
    double sum = 0;
    for (int64_t j = 0; j < c; ++j) {
      double e = std::exp(z.at(i, j) / tau - mx);
      p.at(i, j) = e;
      sum += e;
    }
    for (int64_t j = 0; j < c; ++j) p.at(i, j) /= sum;
  }
  return p;
}

// softmax((z - c) / tau) row-wise. Teacher logits never carry gradients.
inline TensorD teacher_probs(const TensorD& z, const TensorD& center, double tau) {
  if (center.numel() != z.cols()) throw std::invalid_argument("center length must equal K");
  TensorD shifted(z.shape());
  for (int64_t i = 0; i < z.rows(); ++i)
    for (int64_t j = 0; j < z.cols(); ++j) shifted.at(i, j) = z.at(i, j) - center[j];
  return student_probs(shifted, tau);
}

// c' = m * c + (1 - m) * mean over all rows of z. Pure update.
inline TensorD update_center(const TensorD& center, double momentum, const TensorD& z) {
  if (center.numel() != z.cols()) throw std::invalid_argument("center length must equal K");
  TensorD out(center.shape());
  int64_t r = z.rows(), c = z.cols();
  for (int64_t j = 0; j < c; ++j) {
    double mean = 0;
    for (int64_t i = 0; i < r; ++i) mean += z.at(i, j);
    mean /= static_cast<double>(r);
    out[j] = momentum * center[j] + (1.0 - momentum) * mean;
  }
  return out;
}

// Cross-entropy of student rows against teacher rows, averaged over tokens:
// L = -(1/rows) * sum_i sum_j p_t[i][j] * log p_s[i][j].
inline double concept_loss(const TensorD& p_t, const TensorD& p_s) {
  if (!p_t.same_shape(p_s)) throw std::invalid_argument("concept_loss: shape mismatch");
  double acc = 0;
  int64_t r = p_t.rows(), c = p_t.cols();
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j)
      acc -= p_t.at(i, j) * std::log(std::max(p_s.at(i, j), 1e-12));
  return acc / static_cast<double>(r);
}

inline double combined_loss(double l_recon, double l_concept, double weight_recon) {
  return l_concept + weight_recon * l_recon;
}

// Shannon entropy of one distribution row.
inline double entropy(const double* p, int64_t k) {
  double h = 0;
  for (int64_t j = 0; j < k; ++j)
    if (p[j] > 0) h -= p[j] * std::log(p[j]);
  return h;
}

// Entropy of the mean teacher distribution; the collapse diagnostic.
inline double mean_distribution_entropy(const TensorD& probs) {
  int64_t r = probs.rows(), c = probs.cols();
  std::vector<double> mean(static_cast<size_t>(c), 0.0);
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) mean[static_cast<size_t>(j)] += probs.at(i, j);
  for (int64_t j = 0; j < c; ++j) mean[static_cast<size_t>(j)] /= static_cast<double>(r);
  return entropy(mean.data(), c);
}

}  // namespace mcssl
