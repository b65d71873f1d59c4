#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mcssl/blas.hpp"
#include "mcssl/tensor.hpp"

namespace mcssl {

// Reverse-mode tape over coarse tensor ops. Nodes are created in evaluation
// order, so iterating ids backwards is a valid topological order. Each op
// stores a closure that scatters the node's accumulated gradient into its
// parents' gradient buffers.
template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    bool needs_grad = false;
    bool grad_live = false;
    std::function<void(Tape&, const Tensor<T>&)> bwd;
  };

  void clear() { nodes_.clear(); }
  int size() const { return static_cast<int>(nodes_.size()); }

  const Tensor<T>& val(int id) const { return nodes_[static_cast<size_t>(id)].val; }

  Tensor<T>& grad(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.grad_live) {
      n.grad = Tensor<T>(n.val.shape());
      n.grad_live = true;
    }
    return n.grad;
  }

  bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  int leaf(Tensor<T> v, bool needs_grad_flag) {
    Node n;
    n.val = std::move(v);
    n.needs_grad = needs_grad_flag;
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  int constant(Tensor<T> v) { return leaf(std::move(v), false); }

  void backward(int loss_id) {
    if (val(loss_id).numel() != 1) throw std::invalid_argument("backward expects a scalar loss");
    grad(loss_id)[0] = T(1);
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.grad_live || !n.bwd) continue;
      n.bwd(*this, n.grad);
    }
  }

  // ---- arithmetic ----

  int add(int a, int b) {
    if (!val(a).same_shape(val(b))) throw std::invalid_argument("add: shape mismatch");
    Tensor<T> out(val(a).shape());
    const Tensor<T>&va = val(a), &vb = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] + vb[i];
    return emit(std::move(out), {a, b}, [a, b](Tape& t, const Tensor<T>& g) {
      if (t.needs_grad(a)) axpy(t.grad(a), g, T(1));
      if (t.needs_grad(b)) axpy(t.grad(b), g, T(1));
    });
  }

  int mul(int a, int b) {
    if (!val(a).same_shape(val(b))) throw std::invalid_argument("mul: shape mismatch");
    Tensor<T> out(val(a).shape());
    const Tensor<T>&va = val(a), &vb = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = va[i] * vb[i];
    return emit(std::move(out), {a, b}, [a, b](Tape& t, const Tensor<T>& g) {
      if (t.needs_grad(a)) {
        Tensor<T>& ga = t.grad(a);
        const Tensor<T>& vb = t.val(b);
        for (int64_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb[i];
      }
      if (t.needs_grad(b)) {
        Tensor<T>& gb = t.grad(b);
        const Tensor<T>& va = t.val(a);
        for (int64_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
      }
    });
  }

  int scale(int x, T s) {
    Tensor<T> out(val(x).shape());
    const Tensor<T>& vx = val(x);
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = vx[i] * s;
    return emit(std::move(out), {x}, [x, s](Tape& t, const Tensor<T>& g) {
      if (t.needs_grad(x)) axpy(t.grad(x), g, s);
    });
  }

  int sum(int x) {
    T acc(0);
    const Tensor<T>& vx = val(x);
    for (int64_t i = 0; i < vx.numel(); ++i) acc += vx[i];
    Tensor<T> out({1});
    out[0] = acc;
    return emit(std::move(out), {x}, [x](Tape& t, const Tensor<T>& g) {
      if (!t.needs_grad(x)) return;
      Tensor<T>& gx = t.grad(x);
      for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g[0];
    });
  }

  // alpha * a + beta * b for scalar nodes (loss combination).
  int axpby(int a, int b, T alpha, T beta) {
    Tensor<T> out({1});
    out[0] = alpha * val(a)[0] + beta * val(b)[0];
    return emit(std::move(out), {a, b}, [a, b, alpha, beta](Tape& t, const Tensor<T>& g) {
      if (t.needs_grad(a)) t.grad(a)[0] += alpha * g[0];
      if (t.needs_grad(b)) t.grad(b)[0] += beta * g[0];
    });
  }

  // ---- linear algebra ----

  // c = op(a) * op(b); all operands 2-d.
  int matmul(int a, int b, bool ta = false, bool tb = false) {
    const Tensor<T>&va = val(a), &vb = val(b);
    if (va.ndim() != 2 || vb.ndim() != 2) throw std::invalid_argument("matmul: operands must be 2-d");
    int64_t m = ta ? va.cols() : va.rows();
    int64_t k = ta ? va.rows() : va.cols();
    int64_t kb = tb ? vb.cols() : vb.rows();
    int64_t n = tb ? vb.rows() : vb.cols();
    if (k != kb)
      throw std::invalid_argument("matmul: inner dims " + std::to_string(k) + " vs " +
                                  std::to_string(kb));
    Tensor<T> out({m, n});
    blas::gemm(ta, tb, m, n, k, T(1), va.data(), va.cols(), vb.data(), vb.cols(), T(0),
               out.data(), n);
    return emit(std::move(out), {a, b}, [a, b, ta, tb, m, n, k](Tape& t, const Tensor<T>& g) {
      const Tensor<T>&va = t.val(a), &vb = t.val(b);
      if (t.needs_grad(a)) {
        Tensor<T>& ga = t.grad(a);
        if (!ta)
          blas::gemm(false, !tb, m, k, n, T(1), g.data(), n, vb.data(), vb.cols(), T(1),
                     ga.data(), ga.cols());
        else if (!tb)
          blas::gemm(false, true, k, m, n, T(1), vb.data(), vb.cols(), g.data(), n, T(1),
                     ga.data(), ga.cols());
        else
          blas::gemm(true, true, k, m, n, T(1), vb.data(), vb.cols(), g.data(), n, T(1),
                     ga.data(), ga.cols());
      }
      if (t.needs_grad(b)) {
        Tensor<T>& gb = t.grad(b);
        if (!tb)
          blas::gemm(!ta, false, k, n, m, T(1), va.data(), va.cols(), g.data(), n, T(1),
                     gb.data(), gb.cols());
        else if (!ta)
          blas::gemm(true, false, n, k, m, T(1), g.data(), n, va.data(), va.cols(), T(1),
                     gb.data(), gb.cols());
        else
          blas::gemm(true, true, n, k, m, T(1), g.data(), n, va.data(), va.cols(), T(1),
                     gb.data(), gb.cols());
      }
    });
  }

  // Batched matmul over `batch` contiguous 2-d blocks.
  int bmm(int a, int b, int64_t batch, int64_t m, int64_t k, int64_t n, bool ta = false,
          bool tb = false) {
    const Tensor<T>&va = val(a), &vb = val(b);
    int64_t asz = m * k, bsz = k * n, csz = m * n;
    if (va.numel() != batch * asz || vb.numel() != batch * bsz)
      throw std::invalid_argument("bmm: operand sizes do not match batch dims");
    Tensor<T> out({batch * m, n});
    int64_t lda = ta ? m : k, ldb = tb ? k : n;
    for (int64_t i = 0; i < batch; ++i)
      blas::gemm(ta, tb, m, n, k, T(1), va.data() + i * asz, lda, vb.data() + i * bsz, ldb, T(0),
                 out.data() + i * csz, n);
    return emit(std::move(out), {a, b},
                [a, b, batch, m, k, n, ta, tb, asz, bsz, csz, lda, ldb](Tape& t,
                                                                        const Tensor<T>& g) {
                  const Tensor<T>&va = t.val(a), &vb = t.val(b);
                  if (t.needs_grad(a)) {
                    Tensor<T>& ga = t.grad(a);
                    for (int64_t i = 0; i < batch; ++i) {
                      const T* gp = g.data() + i * csz;
                      const T* bp = vb.data() + i * bsz;
                      T* gap = ga.data() + i * asz;
                      if (!ta)
                        blas::gemm(false, !tb, m, k, n, T(1), gp, n, bp, ldb, T(1), gap, k);
                      else if (!tb)
                        blas::gemm(false, true, k, m, n, T(1), bp, ldb, gp, n, T(1), gap, m);
                      else
                        blas::gemm(true, true, k, m, n, T(1), bp, ldb, gp, n, T(1), gap, m);
                    }
                  }
                  if (t.needs_grad(b)) {
                    Tensor<T>& gb = t.grad(b);
                    for (int64_t i = 0; i < batch; ++i) {
                      const T* gp = g.data() + i * csz;
                      const T* ap = va.data() + i * asz;
                      T* gbp = gb.data() + i * bsz;
                      if (!tb)
                        blas::gemm(!ta, false, k, n, m, T(1), ap, lda, gp, n, T(1), gbp, n);
                      else if (!ta)
                        blas::gemm(true, false, n, k, m, T(1), gp, n, ap, lda, T(1), gbp, k);
                      else
                        blas::gemm(true, true, n, k, m, T(1), gp, n, ap, lda, T(1), gbp, k);
                    }
                  }
                });
  }

  // x: r x c, bias: c.
  int add_bias(int x, int bias) {
    const Tensor<T>&vx = val(x), &vb = val(bias);
    if (vx.ndim() != 2 || vb.numel() != vx.cols())
      throw std::invalid_argument("add_bias: bias length must equal columns");
    Tensor<T> out(vx.shape());
    int64_t r = vx.rows(), c = vx.cols();
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < c; ++j) out.at(i, j) = vx.at(i, j) + vb[j];
    return emit(std::move(out), {x, bias}, [x, bias, r, c](Tape& t, const Tensor<T>& g) {
      if (t.needs_grad(x)) axpy(t.grad(x), g, T(1));
      if (t.needs_grad(bias)) {
        Tensor<T>& gb = t.grad(bias);
        for (int64_t i = 0; i < r; ++i)
          for (int64_t j = 0; j < c; ++j) gb[j] += g.at(i, j);
      }
    });
  }

  // x: (reps*n) x d, pos: n x d broadcast over the leading group index.
  int add_pos(int x, int pos, int64_t reps) {
    const Tensor<T>&vx = val(x), &vp = val(pos);
    int64_t n = vp.rows(), d = vp.cols();
    if (vx.rows() != reps * n || vx.cols() != d)
      throw std::invalid_argument("add_pos: shape mismatch");
    Tensor<T> out(vx.shape());
    for (int64_t r = 0; r < reps; ++r)
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out.at(r * n + i, j) = vx.at(r * n + i, j) + vp.at(i, j);
    return emit(std::move(out), {x, pos}, [x, pos, reps, n, d](Tape& t, const Tensor<T>& g) {
      if (t.needs_grad(x)) axpy(t.grad(x), g, T(1));
      if (t.needs_grad(pos)) {
        Tensor<T>& gp = t.grad(pos);
        for (int64_t r = 0; r < reps; ++r)
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < d; ++j) gp.at(i, j) += g.at(r * n + i, j);
      }
    });
  }

  int slice_cols(int x, int64_t c0, int64_t c1) {
    const Tensor<T>& vx = val(x);
    if (vx.ndim() != 2 || c0 < 0 || c1 > vx.cols() || c0 >= c1)
      throw std::invalid_argument("slice_cols: bad range");
    int64_t r = vx.rows(), w = c1 - c0;
    Tensor<T> out({r, w});
    for (int64_t i = 0; i < r; ++i)
      for (int64_t j = 0; j < w; ++j) out.at(i, j) = vx.at(i, c0 + j);
    return emit(std::move(out), {x}, [x, c0, r, w](Tape& t, const Tensor<T>& g) {
      if (!t.needs_grad(x)) return;
      Tensor<T>& gx = t.grad(x);
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < w; ++j) gx.at(i, c0 + j) += g.at(i, j);
    });
  }

  // (B*n) x (h*dh) -> (B*h*n) x dh, head-major blocks for bmm.
  int split_heads(int x, int64_t B, int64_t n, int64_t h, int64_t dh) {
    const Tensor<T>& vx = val(x);
    if (vx.rows() != B * n || vx.cols() != h * dh)
      throw std::invalid_argument("split_heads: shape mismatch");
    Tensor<T> out({B * h * n, dh});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t hh = 0; hh < h; ++hh)
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < dh; ++j)
            out.at((b * h + hh) * n + i, j) = vx.at(b * n + i, hh * dh + j);
    return emit(std::move(out), {x}, [x, B, n, h, dh](Tape& t, const Tensor<T>& g) {
      if (!t.needs_grad(x)) return;
      Tensor<T>& gx = t.grad(x);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t hh = 0; hh < h; ++hh)
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < dh; ++j)
              gx.at(b * n + i, hh * dh + j) += g.at((b * h + hh) * n + i, j);
    });
  }

  int merge_heads(int x, int64_t B, int64_t n, int64_t h, int64_t dh) {
    const Tensor<T>& vx = val(x);
    if (vx.rows() != B * h * n || vx.cols() != dh)
      throw std::invalid_argument("merge_heads: shape mismatch");
    Tensor<T> out({B * n, h * dh});
    for (int64_t b = 0; b < B; ++b)
      for (int64_t hh = 0; hh < h; ++hh)
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < dh; ++j)
            out.at(b * n + i, hh * dh + j) = vx.at((b * h + hh) * n + i, j);
    return emit(std::move(out), {x}, [x, B, n, h, dh](Tape& t, const Tensor<T>& g) {
      if (!t.needs_grad(x)) return;
      Tensor<T>& gx = t.grad(x);
      for (int64_t b = 0; b < B; ++b)
        for (int64_t hh = 0; hh < h; ++hh)
          for (int64_t i = 0; i < n; ++i)
            for (int64_t j = 0; j < dh; ++j)
              gx.at((b * h + hh) * n + i, j) += g.at(b * n + i, hh * dh + j);
    });
  }

  // B x C x H x W -> (B*n) x (C*p*p), one row per token, tokens row-major.
  int patchify(int x, int64_t B, int64_t C, int64_t H, int64_t W, int64_t p) {
    const Tensor<T>& vx = val(x);
    if (vx.numel() != B * C * H * W || H % p || W % p)
      throw std::invalid_argument("patchify: shape mismatch");
    int64_t gh = H / p, gw = W / p, n = gh * gw;
    Tensor<T> out({B * n, C * p * p});
    const T* src = vx.data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t ty = 0; ty < gh; ++ty)
        for (int64_t tx = 0; tx < gw; ++tx) {
          T* row = out.data() + (b * n + ty * gw + tx) * C * p * p;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t dy = 0; dy < p; ++dy)
              for (int64_t dx = 0; dx < p; ++dx)
                row[c * p * p + dy * p + dx] =
                    src[((b * C + c) * H + ty * p + dy) * W + tx * p + dx];
        }
    return emit(std::move(out), {x},
                [x, B, C, H, W, p, gh, gw, n](Tape& t, const Tensor<T>& g) {
                  if (!t.needs_grad(x)) return;
                  Tensor<T>& gx = t.grad(x);
                  T* dst = gx.data();
                  for (int64_t b = 0; b < B; ++b)
                    for (int64_t ty = 0; ty < gh; ++ty)
                      for (int64_t tx = 0; tx < gw; ++tx) {
                        const T* row = g.data() + (b * n + ty * gw + tx) * C * p * p;
                        for (int64_t c = 0; c < C; ++c)
                          for (int64_t dy = 0; dy < p; ++dy)
                            for (int64_t dx = 0; dx < p; ++dx)
                              dst[((b * C + c) * H + ty * p + dy) * W + tx * p + dx] +=
                                  row[c * p * p + dy * p + dx];
                      }
                });
  }

  // (B*n) x (C*p*p) -> B x C x H x W; exact inverse layout of patchify.
  int unpatchify(int x, int64_t B, int64_t C, int64_t H, int64_t W, int64_t p) {
    const Tensor<T>& vx = val(x);
    int64_t gh = H / p, gw = W / p, n = gh * gw;
    if (vx.rows() != B * n || vx.cols() != C * p * p)
      throw std::invalid_argument("unpatchify: shape mismatch");
    Tensor<T> out({B, C, H, W});
    T* dst = out.data();
    for (int64_t b = 0; b < B; ++b)
      for (int64_t ty = 0; ty < gh; ++ty)
        for (int64_t tx = 0; tx < gw; ++tx) {
          const T* row = vx.data() + (b * n + ty * gw + tx) * C * p * p;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t dy = 0; dy < p; ++dy)
              for (int64_t dx = 0; dx < p; ++dx)
                dst[((b * C + c) * H + ty * p + dy) * W + tx * p + dx] =
                    row[c * p * p + dy * p + dx];
        }
    return emit(std::move(out), {x},
                [x, B, C, H, W, p, gh, gw, n](Tape& t, const Tensor<T>& g) {
                  if (!t.needs_grad(x)) return;
                  Tensor<T>& gx = t.grad(x);
                  const T* src = g.data();
                  for (int64_t b = 0; b < B; ++b)
                    for (int64_t ty = 0; ty < gh; ++ty)
                      for (int64_t tx = 0; tx < gw; ++tx) {
                        T* row = gx.data() + (b * n + ty * gw + tx) * C * p * p;
                        for (int64_t c = 0; c < C; ++c)
                          for (int64_t dy = 0; dy < p; ++dy)
                            for (int64_t dx = 0; dx < p; ++dx)
                              row[c * p * p + dy * p + dx] +=
                                  src[((b * C + c) * H + ty * p + dy) * W + tx * p + dx];
                      }
                });
  }

  // Group rows into `groups` blocks of n and average each block.
  int mean_rows(int x, int64_t groups, int64_t n) {
    const Tensor<T>& vx = val(x);
    if (vx.rows() != groups * n) throw std::invalid_argument("mean_rows: shape mismatch");
    int64_t d = vx.cols();
    Tensor<T> out({groups, d});
    for (int64_t gidx = 0; gidx < groups; ++gidx)
      for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < d; ++j) out.at(gidx, j) += vx.at(gidx * n + i, j) / T(n);
    return emit(std::move(out), {x}, [x, groups, n, d](Tape& t, const Tensor<T>& g) {
      if (!t.needs_grad(x)) return;
      Tensor<T>& gx = t.grad(x);
      for (int64_t gidx = 0; gidx < groups; ++gidx)
        for (int64_t i = 0; i < n; ++i)
          for (int64_t j = 0; j < d; ++j) gx.at(gidx * n + i, j) += g.at(gidx, j) / T(n);
    });
  }

  // ---- nonlinearities ----

  int gelu(int x) {
    const Tensor<T>& vx = val(x);
    Tensor<T> out(vx.shape());
    for (int64_t i = 0; i < vx.numel(); ++i) {
      double v = static_cast<double>(vx[i]);
      out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)));
    }
    return emit(std::move(out), {x}, [x](Tape& t, const Tensor<T>& g) {
      if (!t.needs_grad(x)) return;
      Tensor<T>& gx = t.grad(x);
      const Tensor<T>& vx = t.val(x);
      constexpr double inv_sqrt_2pi = 0.3989422804014327;
      for (int64_t i = 0; i < g.numel(); ++i) {
        double v = static_cast<double>(vx[i]);
        double d = 0.5 * (1.0 + std::erf(v * M_SQRT1_2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        gx[i] += g[i] * static_cast<T>(d);
      }
    });
  }

  int layernorm(int x, int gamma, int beta, T eps) {
    const Tensor<T>& vx = val(x);
    if (vx.ndim() != 2) throw std::invalid_argument("layernorm: input must be 2-d");
    int64_t r = vx.rows(), c = vx.cols();
    if (val(gamma).numel() != c || val(beta).numel() != c)
      throw std::invalid_argument("layernorm: affine params must have length cols");
    Tensor<T> out({r, c});
    auto rstd = std::make_shared<std::vector<T>>(static_cast<size_t>(r));
    auto mean = std::make_shared<std::vector<T>>(static_cast<size_t>(r));
    const Tensor<T>&vg = val(gamma), &vb = val(beta);
    for (int64_t i = 0; i < r; ++i) {
      T mu(0);
      for (int64_t j = 0; j < c; ++j) mu += vx.at(i, j);
      mu /= T(c);
      T var(0);
      for (int64_t j = 0; j < c; ++j) {
        T d = vx.at(i, j) - mu;
        var += d * d;
      }
      var /= T(c);
      T rs = T(1) / std::sqrt(var + eps);
      (*mean)[static_cast<size_t>(i)] = mu;
      (*rstd)[static_cast<size_t>(i)] = rs;
      for (int64_t j = 0; j < c; ++j) out.at(i, j) = (vx.at(i, j) - mu) * rs * vg[j] + vb[j];
    }
    return emit(std::move(out), {x, gamma, beta},
                [x, gamma, beta, r, c, mean, rstd](Tape& t, const Tensor<T>& g) {
                  const Tensor<T>& vx = t.val(x);
                  const Tensor<T>& vg = t.val(gamma);
                  std::vector<T> xh(static_cast<size_t>(c)), dxh(static_cast<size_t>(c));
                  for (int64_t i = 0; i < r; ++i) {
                    T mu = (*mean)[static_cast<size_t>(i)], rs = (*rstd)[static_cast<size_t>(i)];
                    T m1(0), m2(0);
                    for (int64_t j = 0; j < c; ++j) {
                      xh[static_cast<size_t>(j)] = (vx.at(i, j) - mu) * rs;
                      dxh[static_cast<size_t>(j)] = g.at(i, j) * vg[j];
                      m1 += dxh[static_cast<size_t>(j)];
                      m2 += dxh[static_cast<size_t>(j)] * xh[static_cast<size_t>(j)];
                    }
                    m1 /= T(c);
                    m2 /= T(c);
                    if (t.needs_grad(x)) {
                      Tensor<T>& gx = t.grad(x);
                      for (int64_t j = 0; j < c; ++j)
                        gx.at(i, j) +=
                            rs * (dxh[static_cast<size_t>(j)] - m1 - xh[static_cast<size_t>(j)] * m2);
                    }
                    if (t.needs_grad(gamma)) {
                      Tensor<T>& gg = t.grad(gamma);
                      for (int64_t j = 0; j < c; ++j)
                        gg[j] += g.at(i, j) * xh[static_cast<size_t>(j)];
                    }
                    if (t.needs_grad(beta)) {
                      Tensor<T>& gb = t.grad(beta);
                      for (int64_t j = 0; j < c; ++j) gb[j] += g.at(i, j);
                    }
                  }
                });
  }

  int softmax_rows(int x) {
    const Tensor<T>& vx = val(x);
    if (vx.ndim() != 2) throw std::invalid_argument("softmax_rows: input must be 2-d");
    int64_t r = vx.rows(), c = vx.cols();
    Tensor<T> out({r, c});
    for (int64_t i = 0; i < r; ++i) {
      T mx = vx.at(i, 0);
      for (int64_t j = 1; j < c; ++j) mx = std::max(mx, vx.at(i, j));
      T z(0);
      for (int64_t j = 0; j < c; ++j) {
        T e = std::exp(vx.at(i, j) - mx);
        out.at(i, j) = e;
        z += e;
      }
      for (int64_t j = 0; j < c; ++j) out.at(i, j) /= z;
    }
    int id = emit(std::move(out), {x}, nullptr);
    if (nodes_[static_cast<size_t>(id)].needs_grad)
      nodes_[static_cast<size_t>(id)].bwd = [x, id, r, c](Tape& t, const Tensor<T>& g) {
        if (!t.needs_grad(x)) return;
        Tensor<T>& gx = t.grad(x);
        const Tensor<T>& p = t.val(id);
        for (int64_t i = 0; i < r; ++i) {
          T dot(0);
          for (int64_t j = 0; j < c; ++j) dot += g.at(i, j) * p.at(i, j);
          for (int64_t j = 0; j < c; ++j) gx.at(i, j) += p.at(i, j) * (g.at(i, j) - dot);
        }
      };
    return id;
  }

  // Rows scaled to unit l2 norm; eps keeps the zero row finite.
  int l2norm_rows(int x, T eps) {
    const Tensor<T>& vx = val(x);
    if (vx.ndim() != 2) throw std::invalid_argument("l2norm_rows: input must be 2-d");
    int64_t r = vx.rows(), c = vx.cols();
    Tensor<T> out({r, c});
    auto rnorm = std::make_shared<std::vector<T>>(static_cast<size_t>(r));
    for (int64_t i = 0; i < r; ++i) {
      T s(0);
      for (int64_t j = 0; j < c; ++j) s += vx.at(i, j) * vx.at(i, j);
      T rn = T(1) / std::sqrt(s + eps);
      (*rnorm)[static_cast<size_t>(i)] = rn;
      for (int64_t j = 0; j < c; ++j) out.at(i, j) = vx.at(i, j) * rn;
    }
    return emit(std::move(out), {x}, [x, r, c, rnorm](Tape& t, const Tensor<T>& g) {
      if (!t.needs_grad(x)) return;
      Tensor<T>& gx = t.grad(x);
      const Tensor<T>& vx = t.val(x);
      for (int64_t i = 0; i < r; ++i) {
        T rn = (*rnorm)[static_cast<size_t>(i)];
        T dot(0);
        for (int64_t j = 0; j < c; ++j) dot += g.at(i, j) * vx.at(i, j);
        T rn3 = rn * rn * rn;
        for (int64_t j = 0; j < c; ++j) gx.at(i, j) += rn * g.at(i, j) - rn3 * vx.at(i, j) * dot;
      }
    });
  }

  // ---- losses ----

  // Mean absolute difference against a constant target, optionally restricted
  // to mask > 0 entries. Empty mask yields loss 0.
  int l1_loss(int x, Tensor<T> target, const Tensor<T>* mask = nullptr) {
    const Tensor<T>& vx = val(x);
    if (!vx.same_shape(target)) throw std::invalid_argument("l1_loss: shape mismatch");
    auto tgt = std::make_shared<Tensor<T>>(std::move(target));
    std::shared_ptr<Tensor<T>> msk;
    double denom = static_cast<double>(vx.numel());
    if (mask) {
      if (mask->numel() != vx.numel()) throw std::invalid_argument("l1_loss: mask size mismatch");
      msk = std::make_shared<Tensor<T>>(*mask);
      denom = 0;
      for (int64_t i = 0; i < msk->numel(); ++i)
        if ((*msk)[i] > T(0)) denom += 1;
    }
    double acc = 0;
    for (int64_t i = 0; i < vx.numel(); ++i) {
      if (msk && !((*msk)[i] > T(0))) continue;
      acc += std::fabs(static_cast<double>(vx[i] - (*tgt)[i]));
    }
    Tensor<T> out({1});
    out[0] = denom > 0 ? static_cast<T>(acc / denom) : T(0);
    return emit(std::move(out), {x}, [x, tgt, msk, denom](Tape& t, const Tensor<T>& g) {
      if (!t.needs_grad(x) || denom <= 0) return;
      Tensor<T>& gx = t.grad(x);
      const Tensor<T>& vx = t.val(x);
      T w = g[0] / static_cast<T>(denom);
      for (int64_t i = 0; i < vx.numel(); ++i) {
        if (msk && !((*msk)[i] > T(0))) continue;
        T d = vx[i] - (*tgt)[i];
        gx[i] += d > T(0) ? w : (d < T(0) ? -w : T(0));
      }
    });
  }

  // L = -(1/denom) * sum_rows sum_j p[i][j] * log softmax(z/tau)[i][j]
  // with constant target probabilities p; gradient (softmax - p)/(denom*tau).
  int softmax_xent(int z, Tensor<T> target_probs, T tau, T denom) {
    const Tensor<T>& vz = val(z);
    if (!vz.same_shape(target_probs)) throw std::invalid_argument("softmax_xent: shape mismatch");
    int64_t r = vz.rows(), c = vz.cols();
    auto probs = std::make_shared<Tensor<T>>(std::vector<int64_t>{r, c});
    auto tgt = std::make_shared<Tensor<T>>(std::move(target_probs));
    double acc = 0;
    for (int64_t i = 0; i < r; ++i) {
      double mx = -1e300;
      for (int64_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(vz.at(i, j)) / tau);
      double zsum = 0;
      for (int64_t j = 0; j < c; ++j) {
        double e = std::exp(static_cast<double>(vz.at(i, j)) / tau - mx);
        probs->at(i, j) = static_cast<T>(e);
        zsum += e;
      }
      double logz = std::log(zsum);
      for (int64_t j = 0; j < c; ++j) {
        probs->at(i, j) = static_cast<T>(static_cast<double>(probs->at(i, j)) / zsum);
        double logp = static_cast<double>(vz.at(i, j)) / tau - mx - logz;
        acc -= static_cast<double>(tgt->at(i, j)) * logp;
      }
    }
    Tensor<T> out({1});
    out[0] = static_cast<T>(acc / static_cast<double>(denom));
    return emit(std::move(out), {z}, [z, probs, tgt, tau, denom, r, c](Tape& t, const Tensor<T>& g) {
      if (!t.needs_grad(z)) return;
      Tensor<T>& gz = t.grad(z);
      T w = g[0] / (denom * tau);
      for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j) gz.at(i, j) += w * (probs->at(i, j) - tgt->at(i, j));
    });
  }

  // softmax_xent restricted to rows with row_mask != 0; denom is the count of
  // selected rows (loss 0 when none are selected).
  int softmax_xent_rows(int z, Tensor<T> target_probs, T tau, std::vector<uint8_t> row_mask) {
    const Tensor<T>& vz = val(z);
    if (!vz.same_shape(target_probs)) throw std::invalid_argument("softmax_xent: shape mismatch");
    int64_t r = vz.rows(), c = vz.cols();
    if (static_cast<int64_t>(row_mask.size()) != r)
      throw std::invalid_argument("softmax_xent: row mask length mismatch");
    auto probs = std::make_shared<Tensor<T>>(std::vector<int64_t>{r, c});
    auto tgt = std::make_shared<Tensor<T>>(std::move(target_probs));
    auto rows = std::make_shared<std::vector<uint8_t>>(std::move(row_mask));
    double denom = 0;
    for (uint8_t m : *rows) denom += m ? 1 : 0;
    double acc = 0;
    for (int64_t i = 0; i < r; ++i) {
      if (!(*rows)[static_cast<size_t>(i)]) continue;
      double mx = -1e300;
      for (int64_t j = 0; j < c; ++j) mx = std::max(mx, static_cast<double>(vz.at(i, j)) / tau);
      double zsum = 0;
      for (int64_t j = 0; j < c; ++j) {
        double e = std::exp(static_cast<double>(vz.at(i, j)) / tau - mx);
        probs->at(i, j) = static_cast<T>(e);
        zsum += e;
      }
      double logz = std::log(zsum);
      for (int64_t j = 0; j < c; ++j) {
        probs->at(i, j) = static_cast<T>(static_cast<double>(probs->at(i, j)) / zsum);
        acc -= static_cast<double>(tgt->at(i, j)) *
               (static_cast<double>(vz.at(i, j)) / tau - mx - logz);
      }
    }
    Tensor<T> out({1});
    out[0] = denom > 0 ? static_cast<T>(acc / denom) : T(0);
    return emit(std::move(out), {z}, [z, probs, tgt, rows, tau, denom, r, c](Tape& t,
                                                                            const Tensor<T>& g) {
      if (!t.needs_grad(z) || denom <= 0) return;
      Tensor<T>& gz = t.grad(z);
      T w = g[0] / (static_cast<T>(denom) * tau);
      for (int64_t i = 0; i < r; ++i) {
        if (!(*rows)[static_cast<size_t>(i)]) continue;
        for (int64_t j = 0; j < c; ++j) gz.at(i, j) += w * (probs->at(i, j) - tgt->at(i, j));
      }
    });
  }

  // Asymmetric multi-label loss on logits; sigmoid applied internally with
  // probabilities clamped to [1e-12, 1 - 1e-12].
  int asl_loss(int z, Tensor<T> targets, T gamma_plus, T gamma_minus) {
    const Tensor<T>& vz = val(z);
    if (!vz.same_shape(targets)) throw std::invalid_argument("asl_loss: shape mismatch");
    int64_t r = vz.rows(), c = vz.cols();
    auto tgt = std::make_shared<Tensor<T>>(std::move(targets));
    double denom = static_cast<double>(r * c);
    double acc = 0;
    for (int64_t i = 0; i < vz.numel(); ++i) {
      double p = 1.0 / (1.0 + std::exp(-static_cast<double>(vz[i])));
      p = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
      double t_i = static_cast<double>((*tgt)[i]);
      acc -= t_i * std::pow(1.0 - p, static_cast<double>(gamma_plus)) * std::log(p) +
             (1.0 - t_i) * std::pow(p, static_cast<double>(gamma_minus)) * std::log(1.0 - p);
    }
    Tensor<T> out({1});
    out[0] = static_cast<T>(acc / denom);
    return emit(std::move(out), {z},
                [z, tgt, gamma_plus, gamma_minus, denom](Tape& t, const Tensor<T>& g) {
                  if (!t.needs_grad(z)) return;
                  Tensor<T>& gz = t.grad(z);
                  const Tensor<T>& vz = t.val(z);
                  double gp = static_cast<double>(gamma_plus);
                  double gm = static_cast<double>(gamma_minus);
                  for (int64_t i = 0; i < vz.numel(); ++i) {
                    double p = 1.0 / (1.0 + std::exp(-static_cast<double>(vz[i])));
                    p = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
                    double t_i = static_cast<double>((*tgt)[i]);
                    double dpos = 0, dneg = 0;
                    if (t_i != 0) {
                      dpos = std::pow(1.0 - p, gp) / p;
                      if (gp != 0) dpos -= gp * std::pow(1.0 - p, gp - 1.0) * std::log(p);
                      dpos *= t_i;
                    }
                    if (t_i != 1) {
                      dneg = -std::pow(p, gm) / (1.0 - p);
                      if (gm != 0) dneg += gm * std::pow(p, gm - 1.0) * std::log(1.0 - p);
                      dneg *= (1.0 - t_i);
                    }
                    double dz = -(dpos + dneg) * p * (1.0 - p) / denom;
                    gz[i] += g[0] * static_cast<T>(dz);
                  }
                });
  }

 private:
  static void axpy(Tensor<T>& dst, const Tensor<T>& src, T alpha) {
    for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += alpha * src[i];
  }

  int emit(Tensor<T> out, std::initializer_list<int> parents,
           std::function<void(Tape&, const Tensor<T>&)> bwd) {
    Node n;
    n.val = std::move(out);
    for (int p : parents) n.needs_grad = n.needs_grad || nodes_[static_cast<size_t>(p)].needs_grad;
    if (n.needs_grad) n.bwd = std::move(bwd);
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  std::vector<Node> nodes_;
};

}  // namespace mcssl
