#pragma once

#include <stdexcept>

#include "mcssl/params.hpp"
#include "mcssl/rng.hpp"
#include "mcssl/vit.hpp"

namespace mcssl {

struct HeadConfig {
  int64_t hidden = 2048;
  int64_t bottleneck = 256;
  int64_t num_concepts = 1024;  // K, concept head only

  void validate() const {
    if (hidden < 1 || bottleneck < 1) throw std::invalid_argument("head dims must be positive");
    if (num_concepts < 2) throw std::invalid_argument("num_concepts must be >= 2");
  }
};

constexpr double kNormEps = 1e-12;

// Reconstruction head: token MLP (hidden, GeLU, hidden, GeLU, bottleneck)
// followed by a transposed convolution with kernel = stride = patch, i.e. a
// per-token linear map onto its pixel block.
template <typename T>
ParamSet<T> init_recon_head(const BackboneConfig& bb, const HeadConfig& hc, Rng& rng) {
  ParamSet<T> p;
  auto winit = [&rng](std::vector<int64_t> shape) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.trunc_normal(0.02));
    return t;
  };
  int64_t d = bb.embed_dim, h = hc.hidden, bt = hc.bottleneck;
  int64_t pp = bb.channels * bb.patch_size * bb.patch_size;
  p.add("pr.fc1.w", winit({d, h}));
  p.add("pr.fc1.b", Tensor<T>({h}));
  p.add("pr.fc2.w", winit({h, h}));
  p.add("pr.fc2.b", Tensor<T>({h}));
  p.add("pr.fc3.w", winit({h, bt}));
  p.add("pr.fc3.b", Tensor<T>({bt}));
  p.add("pr.out.w", winit({bt, pp}));
  p.add("pr.out.b", Tensor<T>({pp}));
  return p;
}

template <typename T>
int build_reconstruct(Tape<T>& tape, int tokens, const BackboneConfig& bb,
                      const GraphParams<T>& w, int64_t batch) {
  int h1 = tape.gelu(tape.add_bias(tape.matmul(tokens, w.at("pr.fc1.w")), w.at("pr.fc1.b")));
  int h2 = tape.gelu(tape.add_bias(tape.matmul(h1, w.at("pr.fc2.w")), w.at("pr.fc2.b")));
  int h3 = tape.add_bias(tape.matmul(h2, w.at("pr.fc3.w")), w.at("pr.fc3.b"));
  int px = tape.add_bias(tape.matmul(h3, w.at("pr.out.w")), w.at("pr.out.b"));
  return tape.unpatchify(px, batch, bb.channels, bb.image_size, bb.image_size, bb.patch_size);
}

// Concept head: token MLP to the bottleneck, l2 normalization, then a
// weight-normalized K-way layer (rows kept at unit norm, gain 1, no bias), so
// every logit is a cosine in [-1, 1].
template <typename T>
ParamSet<T> init_concept_head(const BackboneConfig& bb, const HeadConfig& hc, Rng& rng) {
  hc.validate();
  ParamSet<T> p;
  auto winit = [&rng](std::vector<int64_t> shape) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.trunc_normal(0.02));
    return t;
  };
  int64_t d = bb.embed_dim, h = hc.hidden, bt = hc.bottleneck;
  p.add("pc.fc1.w", winit({d, h}));
  p.add("pc.fc1.b", Tensor<T>({h}));
  p.add("pc.fc2.w", winit({h, h}));
  p.add("pc.fc2.b", Tensor<T>({h}));
  p.add("pc.fc3.w", winit({h, bt}));
  p.add("pc.fc3.b", Tensor<T>({bt}));
  p.add("pc.last.w", winit({hc.num_concepts, bt}));
  return p;
}

template <typename T>
int build_concept_logits(Tape<T>& tape, int tokens, const GraphParams<T>& w) {
  int h1 = tape.gelu(tape.add_bias(tape.matmul(tokens, w.at("pc.fc1.w")), w.at("pc.fc1.b")));
  int h2 = tape.gelu(tape.add_bias(tape.matmul(h1, w.at("pc.fc2.w")), w.at("pc.fc2.b")));
  int h3 = tape.add_bias(tape.matmul(h2, w.at("pc.fc3.w")), w.at("pc.fc3.b"));
  int unit = tape.l2norm_rows(h3, T(kNormEps));
  int wn = tape.l2norm_rows(w.at("pc.last.w"), T(kNormEps));
  return tape.matmul(unit, wn, false, true);
}

// Project the rows of the weight-normalized layer back to unit norm (applied
// after every optimizer step).
template <typename T>
void renormalize_rows(Tensor<T>& w, T eps = T(kNormEps)) {
  int64_t r = w.rows(), c = w.cols();
  for (int64_t i = 0; i < r; ++i) {
    double s = 0;
    for (int64_t j = 0; j < c; ++j) s += static_cast<double>(w.at(i, j)) * w.at(i, j);
    T rn = static_cast<T>(1.0 / std::sqrt(s + static_cast<double>(eps)));
    for (int64_t j = 0; j < c; ++j) w.at(i, j) *= rn;
  }
}

// Plain-tensor forward of the concept head (no autograd); used by the teacher.
template <typename T>
Tensor<T> concept_logits_tokens(const ParamSet<T>& params, const Tensor<T>& tokens) {
  Tape<T> tape;
  GraphParams<T> w(tape, params, false);
  int tok = tape.constant(tokens);
  return tape.val(build_concept_logits(tape, tok, w));
}

}  // namespace mcssl
