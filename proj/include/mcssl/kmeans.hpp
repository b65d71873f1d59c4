#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "mcssl/rng.hpp"
#include "mcssl/tensor.hpp"

namespace mcssl {

struct ClusterMap {
  std::vector<int> assignments;  // n entries in [0, k)
  TensorD centroids;             // k x D
  int k = 0;
  double inertia = 0;
  int iterations = 0;
  std::vector<double> inertia_trace;  // one entry per Lloyd iteration
};

namespace detail {

inline double sq_dist(const TensorD& a, int64_t ra, const TensorD& b, int64_t rb) {
  double s = 0;
  for (int64_t j = 0; j < a.cols(); ++j) {
    double d = a.at(ra, j) - b.at(rb, j);
    s += d * d;
  }
  return s;
}

}  // namespace detail

// k-means++ seeding then Lloyd iterations until the assignment fixpoint or
// 300 rounds. Deterministic in (features, k, seed). An emptied cluster is
// re-seeded on the point farthest from its current centroid (lowest index on
// ties) so every cluster id stays populated.
inline ClusterMap kmeans(const TensorD& features, int k, uint64_t seed, int max_iters = 300) {
  int64_t n = features.rows(), d = features.cols();
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  if (k > n) throw std::invalid_argument("kmeans: k exceeds the number of points");

  Rng rng(mix64(seed, 0x6B6D65616E73ULL));
  ClusterMap out;
  out.k = k;
  out.centroids = TensorD({k, d});
  out.assignments.assign(static_cast<size_t>(n), 0);

  // k-means++: first centroid uniform, the rest D^2-sampled
  std::vector<int64_t> chosen;
  chosen.push_back(rng.uniform_int(n));
  std::vector<double> d2(static_cast<size_t>(n), std::numeric_limits<double>::max());
  for (int c = 1; c < k; ++c) {
    double total = 0;
    for (int64_t i = 0; i < n; ++i) {
      double dd = detail::sq_dist(features, i, features, chosen.back());
      d2[static_cast<size_t>(i)] = std::min(d2[static_cast<size_t>(i)], dd);
      total += d2[static_cast<size_t>(i)];
    }
    int64_t pick = 0;
    if (total > 0) {
      double r = rng.uniform() * total, acc = 0;
      for (int64_t i = 0; i < n; ++i) {
        acc += d2[static_cast<size_t>(i)];
        if (acc >= r) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(n);
    }
    chosen.push_back(pick);
  }
  for (int c = 0; c < k; ++c)
    for (int64_t j = 0; j < d; ++j) out.centroids.at(c, j) = features.at(chosen[static_cast<size_t>(c)], j);

  std::vector<int> prev(static_cast<size_t>(n), -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    // assignment
    double inertia = 0;
    for (int64_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = detail::sq_dist(features, i, out.centroids, 0);
      for (int c = 1; c < k; ++c) {
        double dd = detail::sq_dist(features, i, out.centroids, c);
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      out.assignments[static_cast<size_t>(i)] = best;
      inertia += bd;
    }
    out.inertia = inertia;
    out.inertia_trace.push_back(inertia);
    out.iterations = iter + 1;
    if (out.assignments == prev) break;
    prev = out.assignments;

    // update
    std::vector<int64_t> counts(static_cast<size_t>(k), 0);
    TensorD sums({k, d});
    for (int64_t i = 0; i < n; ++i) {
      int c = out.assignments[static_cast<size_t>(i)];
      ++counts[static_cast<size_t>(c)];
      for (int64_t j = 0; j < d; ++j) sums.at(c, j) += features.at(i, j);
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<size_t>(c)] > 0) {
        for (int64_t j = 0; j < d; ++j)
          out.centroids.at(c, j) = sums.at(c, j) / static_cast<double>(counts[static_cast<size_t>(c)]);
      } else {
        int64_t far = 0;
        double fd = -1;
        for (int64_t i = 0; i < n; ++i) {
          int a = out.assignments[static_cast<size_t>(i)];
          double dd = detail::sq_dist(features, i, out.centroids, a);
          if (dd > fd) {
            fd = dd;
            far = i;
          }
        }
        for (int64_t j = 0; j < d; ++j) out.centroids.at(c, j) = features.at(far, j);
      }
    }
  }
  return out;
}

}  // namespace mcssl
