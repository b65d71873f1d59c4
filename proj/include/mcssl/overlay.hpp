#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include "mcssl/image.hpp"
#include "mcssl/kmeans.hpp"
#include "mcssl/tensor.hpp"

namespace mcssl {

// Fixed palette indexed by cluster id; wraps after 12 entries.
inline std::array<float, 3> cluster_color(int id) {
  static const float table[12][3] = {
      {0.90f, 0.10f, 0.10f}, {0.10f, 0.45f, 0.90f}, {0.10f, 0.75f, 0.20f},
      {0.95f, 0.75f, 0.10f}, {0.65f, 0.20f, 0.80f}, {0.95f, 0.45f, 0.10f},
      {0.10f, 0.80f, 0.80f}, {0.90f, 0.30f, 0.60f}, {0.55f, 0.35f, 0.15f},
      {0.35f, 0.35f, 0.95f}, {0.50f, 0.70f, 0.10f}, {0.40f, 0.40f, 0.40f}};
  const float* c = table[id % 12];
  return {c[0], c[1], c[2]};
}

// Tints each token's pixel block with its cluster color:
// out = (1 - alpha) * pixel + alpha * color. alpha = 0 returns the input.
inline Image render_overlay(const Image& img, const ClusterMap& map, double alpha) {
  if (alpha < 0 || alpha > 1) throw std::invalid_argument("render_overlay: alpha must be in [0, 1]");
  int64_t n = static_cast<int64_t>(map.assignments.size());
  int64_t g = 1;
  while (g * g < n) ++g;
  if (g * g != n) throw std::invalid_argument("render_overlay: token count is not a square grid");
  if (img.h % g != 0 || img.w % g != 0 || img.h != img.w)
    throw std::invalid_argument("render_overlay: grid mismatch between image and cluster map");
  int64_t block = img.h / g;
  Image out = img;
  for (int64_t ty = 0; ty < g; ++ty)
    for (int64_t tx = 0; tx < g; ++tx) {
      std::array<float, 3> color = cluster_color(map.assignments[static_cast<size_t>(ty * g + tx)]);
      for (int64_t dy = 0; dy < block; ++dy)
        for (int64_t dx = 0; dx < block; ++dx)
          for (int64_t c = 0; c < img.c; ++c) {
            float& px = out.at(ty * block + dy, tx * block + dx, c);
            px = static_cast<float>((1.0 - alpha) * px + alpha * color[static_cast<size_t>(c % 3)]);
          }
    }
  return out;
}

// Mean concept distribution over the tokens assigned to one cluster.
inline std::vector<double> dominant_concept_histogram(const TensorD& probs, const ClusterMap& map,
                                                      int cluster_id) {
  if (cluster_id < 0 || cluster_id >= map.k)
    throw std::invalid_argument("dominant_concept_histogram: cluster id out of range");
  if (probs.rows() != static_cast<int64_t>(map.assignments.size()))
    throw std::invalid_argument("dominant_concept_histogram: token count mismatch");
  std::vector<double> mean(static_cast<size_t>(probs.cols()), 0.0);
  int64_t count = 0;
  for (int64_t i = 0; i < probs.rows(); ++i) {
    if (map.assignments[static_cast<size_t>(i)] != cluster_id) continue;
    ++count;
    for (int64_t j = 0; j < probs.cols(); ++j) mean[static_cast<size_t>(j)] += probs.at(i, j);
  }
  if (count == 0) throw std::runtime_error("empty cluster");
  for (double& v : mean) v /= static_cast<double>(count);
  return mean;
}

}  // namespace mcssl
