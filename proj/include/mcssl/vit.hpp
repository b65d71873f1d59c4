#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcssl/params.hpp"
#include "mcssl/rng.hpp"

namespace mcssl {

struct BackboneConfig {
  int64_t patch_size = 4;
  int64_t embed_dim = 192;
  int64_t depth = 4;
  int64_t heads = 3;
  double mlp_ratio = 4.0;
  int64_t image_size = 32;
  int64_t channels = 3;

  int64_t grid() const { return image_size / patch_size; }
  int64_t tokens() const { return grid() * grid(); }
  int64_t head_dim() const { return embed_dim / heads; }
  int64_t mlp_hidden() const { return static_cast<int64_t>(embed_dim * mlp_ratio); }

  void validate() const {
    if (patch_size < 1 || image_size % patch_size)
      throw std::invalid_argument("image_size must be a multiple of patch_size");
    if (depth < 0) throw std::invalid_argument("depth must be >= 0");
    if (heads < 1 || embed_dim % heads)
      throw std::invalid_argument("embed_dim must be divisible by heads");
  }
};

// Truncated normal (sigma 0.02) for weights, zeros for biases and the
// positional table.
template <typename T>
ParamSet<T> init_backbone(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  ParamSet<T> p;
  auto winit = [&rng](std::vector<int64_t> shape) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.trunc_normal(0.02));
    return t;
  };
  int64_t d = cfg.embed_dim, pp = cfg.channels * cfg.patch_size * cfg.patch_size;
  p.add("tok.w", winit({pp, d}));
  p.add("tok.b", Tensor<T>({d}));
  p.add("pos", Tensor<T>({cfg.tokens(), d}));
  int64_t mh = cfg.mlp_hidden();
  for (int64_t i = 0; i < cfg.depth; ++i) {
    std::string blk = "blk" + std::to_string(i) + ".";
    p.add(blk + "ln1.g", Tensor<T>::full({d}, T(1)));
    p.add(blk + "ln1.b", Tensor<T>({d}));
    p.add(blk + "qkv.w", winit({d, 3 * d}));
    p.add(blk + "qkv.b", Tensor<T>({3 * d}));
    p.add(blk + "proj.w", winit({d, d}));
    p.add(blk + "proj.b", Tensor<T>({d}));
    p.add(blk + "ln2.g", Tensor<T>::full({d}, T(1)));
    p.add(blk + "ln2.b", Tensor<T>({d}));
    p.add(blk + "mlp1.w", winit({d, mh}));
    p.add(blk + "mlp1.b", Tensor<T>({mh}));
    p.add(blk + "mlp2.w", winit({mh, d}));
    p.add(blk + "mlp2.b", Tensor<T>({d}));
  }
  return p;
}

// Node ids of interest from a backbone forward pass.
struct BackboneTrace {
  int tokens = -1;            // after tokenizer + positional table
  int output = -1;            // final (B*n) x D features
  std::vector<int> attn_probs;  // one softmax node per block
};

// Conv tokenizer (kernel = stride = patch) as patchify + linear projection,
// plus the learned positional table.
template <typename T>
int build_tokenize(Tape<T>& tape, int image, const BackboneConfig& cfg, const GraphParams<T>& w,
                   int64_t batch) {
  int64_t want = batch * cfg.channels * cfg.image_size * cfg.image_size;
  if (tape.val(image).numel() != want)
    throw std::invalid_argument(
        "tokenize: expected " + std::to_string(batch) + "x" + std::to_string(cfg.channels) + "x" +
        std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size) + " = " +
        std::to_string(want) + " image values, got " + std::to_string(tape.val(image).numel()));
  int patches =
      tape.patchify(image, batch, cfg.channels, cfg.image_size, cfg.image_size, cfg.patch_size);
  int proj = tape.add_bias(tape.matmul(patches, w.at("tok.w")), w.at("tok.b"));
  return tape.add_pos(proj, w.at("pos"), batch);
}

constexpr double kLayerNormEps = 1e-6;

template <typename T>
BackboneTrace build_encode(Tape<T>& tape, int image, const BackboneConfig& cfg,
                           const GraphParams<T>& w, int64_t batch) {
  BackboneTrace trace;
  int x = build_tokenize(tape, image, cfg, w, batch);
  trace.tokens = x;
  int64_t n = cfg.tokens(), d = cfg.embed_dim, h = cfg.heads, dh = cfg.head_dim();
  T attn_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  for (int64_t i = 0; i < cfg.depth; ++i) {
    std::string blk = "blk" + std::to_string(i) + ".";
    int h1 = tape.layernorm(x, w.at(blk + "ln1.g"), w.at(blk + "ln1.b"), T(kLayerNormEps));
    int qkv = tape.add_bias(tape.matmul(h1, w.at(blk + "qkv.w")), w.at(blk + "qkv.b"));
    int q = tape.split_heads(tape.slice_cols(qkv, 0, d), batch, n, h, dh);
    int k = tape.split_heads(tape.slice_cols(qkv, d, 2 * d), batch, n, h, dh);
    int v = tape.split_heads(tape.slice_cols(qkv, 2 * d, 3 * d), batch, n, h, dh);
    int scores = tape.scale(tape.bmm(q, k, batch * h, n, dh, n, false, true), attn_scale);
    int probs = tape.softmax_rows(scores);
    trace.attn_probs.push_back(probs);
    int ctx = tape.merge_heads(tape.bmm(probs, v, batch * h, n, n, dh), batch, n, h, dh);
    int attn_out = tape.add_bias(tape.matmul(ctx, w.at(blk + "proj.w")), w.at(blk + "proj.b"));
    x = tape.add(x, attn_out);
    int h2 = tape.layernorm(x, w.at(blk + "ln2.g"), w.at(blk + "ln2.b"), T(kLayerNormEps));
    int m = tape.gelu(tape.add_bias(tape.matmul(h2, w.at(blk + "mlp1.w")), w.at(blk + "mlp1.b")));
    int m2 = tape.add_bias(tape.matmul(m, w.at(blk + "mlp2.w")), w.at(blk + "mlp2.b"));
    x = tape.add(x, m2);
    if (!tape.val(x).all_finite())
      throw std::runtime_error("non-finite values after transformer block " + std::to_string(i));
  }
  trace.output = x;
  return trace;
}

// Convenience wrapper: forward through the backbone without autograd,
// returning the (B*n) x D feature tensor.
template <typename T>
Tensor<T> encode_tokens(const ParamSet<T>& params, const BackboneConfig& cfg,
                        const Tensor<T>& images, int64_t batch) {
  Tape<T> tape;
  GraphParams<T> w(tape, params, false);
  int img = tape.constant(images);
  BackboneTrace trace = build_encode(tape, img, cfg, w, batch);
  return tape.val(trace.output);
}

}  // namespace mcssl
