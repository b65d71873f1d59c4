#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mcssl/graph.hpp"
#include "mcssl/heads.hpp"
#include "mcssl/objectives.hpp"
#include "mcssl/params.hpp"
#include "mcssl/rng.hpp"
#include "mcssl/tensor.hpp"
#include "mcssl/vit.hpp"

using namespace mcssl;

namespace {

TensorD random_tensor(std::vector<int64_t> shape, Rng& rng, double scale = 1.0) {
  TensorD t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-scale, scale);
  return t;
}

void randomize(ParamSet<double>& p, Rng& rng, double scale = 0.3) {
  for (size_t i = 0; i < p.size(); ++i) {
    TensorD& t = p.tensor(i);
    for (int64_t j = 0; j < t.numel(); ++j) t[j] = rng.uniform(-scale, scale);
  }
}

double gelu_ref(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

// Central finite differences on a random subset of parameter elements.
double fd_check_sampled(ParamSet<double>& params,
                        const std::function<int(Tape<double>&, const GraphParams<double>&)>& build,
                        int64_t max_per_tensor, Rng& rng) {
  ParamSet<double> analytic;
  {
    Tape<double> tape;
    GraphParams<double> w(tape, params, true);
    int loss = build(tape, w);
    tape.backward(loss);
    analytic = w.gradients(params);
  }
  auto loss_at = [&](ParamSet<double>& p) {
    Tape<double> tape;
    GraphParams<double> w(tape, p, false);
    return tape.val(build(tape, w))[0];
  };
  const double h = 1e-5;
  double worst = 0;
  for (size_t t = 0; t < params.size(); ++t) {
    TensorD& tensor = params.tensor(t);
    int64_t n = tensor.numel();
    int64_t checks = std::min(n, max_per_tensor);
    for (int64_t k = 0; k < checks; ++k) {
      int64_t idx = checks == n ? k : rng.uniform_int(n);
      double keep = tensor[idx];
      tensor[idx] = keep + h;
      double fp = loss_at(params);
      tensor[idx] = keep - h;
      double fm = loss_at(params);
      tensor[idx] = keep;
      double num = (fp - fm) / (2 * h);
      double ana = analytic.tensor(t)[idx];
      double rel = std::abs(ana - num) / std::max({std::abs(ana), std::abs(num), 1e-6});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("backbone: zero image and kernel broadcast the positional table") {
  BackboneConfig cfg;
  cfg.image_size = 2;
  cfg.patch_size = 1;
  cfg.embed_dim = 4;
  cfg.depth = 0;
  cfg.heads = 1;
  Rng rng(4);
  ParamSet<double> p = init_backbone<double>(cfg, rng);
  p.at("tok.w") = TensorD({3, 4});  // zero kernel
  TensorD pos = random_tensor({4, 4}, rng);
  p.at("pos") = pos;

  Tape<double> tape;
  GraphParams<double> w(tape, p, false);
  int img = tape.constant(TensorD({2, 3, 2, 2}));
  int tok = build_tokenize(tape, img, cfg, w, 2);
  const TensorD& v = tape.val(tok);
  REQUIRE(v.rows() == 8);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t i = 0; i < 4; ++i)
      for (int64_t j = 0; j < 4; ++j) CHECK(v.at(b * 4 + i, j) == pos.at(i, j));
}

TEST_CASE("backbone: desk configuration yields 64 tokens") {
  BackboneConfig cfg;  // defaults: image 32, patch 4, D 192, depth 4, heads 3
  CHECK(cfg.tokens() == 64);
  CHECK(cfg.grid() == 8);
  Rng rng(1);
  ParamSet<float> p = init_backbone<float>(cfg, rng);
  TensorF img({1, 3, 32, 32});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = float(rng.uniform(-1.0, 1.0));
  TensorF out = encode_tokens(p, cfg, img, 1);
  CHECK(out.rows() == 64);
  CHECK(out.cols() == 192);
  CHECK(out.all_finite());
}

TEST_CASE("backbone: output shape is (B*n) x D for any depth") {
  for (int64_t depth : {0, 1, 3}) {
    BackboneConfig cfg;
    cfg.image_size = 4;
    cfg.patch_size = 2;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.depth = depth;
    Rng rng(7 + uint64_t(depth));
    ParamSet<double> p = init_backbone<double>(cfg, rng);
    TensorD img = random_tensor({3, 3, 4, 4}, rng);
    TensorD out = encode_tokens(p, cfg, img, 3);
    CHECK(out.rows() == 3 * cfg.tokens());
    CHECK(out.cols() == 8);
  }
}

TEST_CASE("backbone: tokenizer matches the brute-force im2col oracle") {
  BackboneConfig cfg;
  cfg.image_size = 8;
  cfg.patch_size = 4;
  cfg.embed_dim = 6;
  cfg.depth = 0;
  cfg.heads = 1;
  Rng rng(12);
  ParamSet<double> p = init_backbone<double>(cfg, rng);
  randomize(p, rng);
  const int64_t B = 2, n = cfg.tokens(), pp = 3 * 16, D = 6;
  TensorD img = random_tensor({B, 3, 8, 8}, rng);

  Tape<double> tape;
  GraphParams<double> w(tape, p, false);
  int tok = build_tokenize(tape, tape.constant(img), cfg, w, B);
  const TensorD& got = tape.val(tok);

  const TensorD& kw = p.at("tok.w");
  const TensorD& kb = p.at("tok.b");
  const TensorD& pos = p.at("pos");
  for (int64_t b = 0; b < B; ++b)
    for (int64_t ty = 0; ty < 2; ++ty)
      for (int64_t tx = 0; tx < 2; ++tx) {
        std::vector<double> flat(static_cast<size_t>(pp), 0.0);
        for (int64_t c = 0; c < 3; ++c)
          for (int64_t dy = 0; dy < 4; ++dy)
            for (int64_t dx = 0; dx < 4; ++dx)
              flat[size_t(c * 16 + dy * 4 + dx)] =
                  img[((b * 3 + c) * 8 + ty * 4 + dy) * 8 + tx * 4 + dx];
        int64_t row = b * n + ty * 2 + tx;
        for (int64_t j = 0; j < D; ++j) {
          double acc = kb[j] + pos.at(ty * 2 + tx, j);
          for (int64_t i = 0; i < pp; ++i) acc += flat[size_t(i)] * kw.at(i, j);
          CHECK(got.at(row, j) == doctest::Approx(acc).epsilon(1e-6));
        }
      }
}

TEST_CASE("backbone: depth zero encode equals tokenize") {
  BackboneConfig cfg;
  cfg.image_size = 4;
  cfg.patch_size = 2;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.depth = 0;
  Rng rng(3);
  ParamSet<double> p = init_backbone<double>(cfg, rng);
  randomize(p, rng);
  TensorD img = random_tensor({2, 3, 4, 4}, rng);
  Tape<double> tape;
  GraphParams<double> w(tape, p, false);
  int image = tape.constant(img);
  int tok = build_tokenize(tape, image, cfg, w, 2);
  BackboneTrace trace = build_encode(tape, image, cfg, w, 2);
  const TensorD& a = tape.val(tok);
  const TensorD& b = tape.val(trace.output);
  REQUIRE(a.numel() == b.numel());
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  CHECK(trace.attn_probs.empty());
}

TEST_CASE("backbone: zero positional table gives permutation equivariance") {
  BackboneConfig cfg;
  cfg.image_size = 2;
  cfg.patch_size = 1;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.depth = 2;
  Rng rng(21);
  ParamSet<double> p = init_backbone<double>(cfg, rng);
  randomize(p, rng);
  p.at("pos") = TensorD({4, 8});  // zeroed

  TensorD img = random_tensor({1, 3, 2, 2}, rng);
  // permutation of the 4 tokens; with patch 1 token i is pixel (i/2, i%2)
  std::vector<int64_t> perm{2, 0, 3, 1};
  TensorD img_p({1, 3, 2, 2});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t i = 0; i < 4; ++i) img_p[c * 4 + i] = img[c * 4 + perm[size_t(i)]];

  TensorD out = encode_tokens(p, cfg, img, 1);
  TensorD out_p = encode_tokens(p, cfg, img_p, 1);
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 8; ++j)
      CHECK(out_p.at(i, j) == doctest::Approx(out.at(perm[size_t(i)], j)).epsilon(1e-9));
}

TEST_CASE("backbone: single block with hand-set weights matches the frozen oracle") {
  BackboneConfig cfg;
  cfg.image_size = 2;
  cfg.patch_size = 1;
  cfg.embed_dim = 4;
  cfg.heads = 1;
  cfg.depth = 1;
  cfg.mlp_ratio = 1.0;
  Rng rng(0);
  ParamSet<double> p = init_backbone<double>(cfg, rng);
  p.at("tok.w") = TensorD({3, 4});
  p.at("tok.b") = TensorD({4});
  p.at("pos") = TensorD({4, 4}, {1, -1, 1, -1, 1, 1, -1, -1, 1, -1, -1, 1, 0.5, -0.5, 1.0, -1.0});
  TensorD qkv({4, 12});
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t s = 0; s < 3; ++s) qkv.at(i, s * 4 + i) = 1.0;
  p.at("blk0.qkv.w") = qkv;
  p.at("blk0.qkv.b") = TensorD({12});
  TensorD eye({4, 4});
  for (int64_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
  p.at("blk0.proj.w") = eye;
  p.at("blk0.proj.b") = TensorD({4});
  TensorD half = eye;
  for (int64_t i = 0; i < 16; ++i) half[i] *= 0.5;
  p.at("blk0.mlp1.w") = half;
  p.at("blk0.mlp1.b") = TensorD::full({4}, 0.1);
  p.at("blk0.mlp2.w") = eye;
  p.at("blk0.mlp2.b") = TensorD::full({4}, -0.05);

  Tape<double> tape;
  GraphParams<double> w(tape, p, false);
  BackboneTrace trace = build_encode(tape, tape.constant(TensorD({1, 3, 2, 2})), cfg, w, 1);

  const double kAttn[16] = {
      0.460166082654205,   0.06227683168530363, 0.06227683168530363, 0.41528025397518764,
      0.09625527217735377, 0.7112341834679387,  0.09625527217735377, 0.09625527217735377,
      0.10080312504068353, 0.10080312504068353, 0.7448384561962191,  0.05355529372241371,
      0.42776701800871786, 0.06414938905967069, 0.03408167526371324, 0.4740019176678982};
  const double kOut[16] = {
      2.2305466286369047, -1.9030988215741558, 2.2474596760940826, -2.1797378699248244,
      2.4163585642263277, 1.7737956839540276,  -1.7691688297613581, -2.0267878035656453,
      2.431748037847417,  -1.96883439505405,   -1.8613966898234011, 1.792753707951198,
      1.6190105493088063, -1.3504239905354838, 2.3881913017379612,  -2.2637458397105212};
  REQUIRE(trace.attn_probs.size() == 1);
  const TensorD& probs = tape.val(trace.attn_probs[0]);
  const TensorD& out = tape.val(trace.output);
  for (int64_t i = 0; i < 16; ++i) {
    CHECK(probs[i] == doctest::Approx(kAttn[i]).epsilon(1e-9));
    CHECK(out[i] == doctest::Approx(kOut[i]).epsilon(1e-9));
  }
}

TEST_CASE("backbone: attention rows are probability vectors") {
  BackboneConfig cfg;
  cfg.image_size = 4;
  cfg.patch_size = 1;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.depth = 3;
  Rng rng(31);
  ParamSet<double> p = init_backbone<double>(cfg, rng);
  randomize(p, rng);
  TensorD img = random_tensor({2, 3, 4, 4}, rng);
  Tape<double> tape;
  GraphParams<double> w(tape, p, false);
  BackboneTrace trace = build_encode(tape, tape.constant(img), cfg, w, 2);
  REQUIRE(trace.attn_probs.size() == 3);
  for (int node : trace.attn_probs) {
    const TensorD& probs = tape.val(node);
    for (int64_t i = 0; i < probs.rows(); ++i) {
      double sum = 0;
      for (int64_t j = 0; j < probs.cols(); ++j) {
        CHECK(probs.at(i, j) >= 0.0);
        sum += probs.at(i, j);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("backbone: layernorm rows are standardized before the affine map") {
  Rng rng(40);
  Tape<double> tape;
  int x = tape.constant(random_tensor({50, 16}, rng, 3.0));
  int g = tape.constant(TensorD::full({16}, 1.0));
  int b = tape.constant(TensorD({16}));
  int ln = tape.layernorm(x, g, b, kLayerNormEps);
  const TensorD& v = tape.val(ln);
  for (int64_t i = 0; i < 50; ++i) {
    double mean = 0, var = 0;
    for (int64_t j = 0; j < 16; ++j) mean += v.at(i, j);
    mean /= 16;
    for (int64_t j = 0; j < 16; ++j) var += (v.at(i, j) - mean) * (v.at(i, j) - mean);
    var /= 16;
    CHECK(std::abs(mean) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }
}

TEST_CASE("backbone: errors name the offending block or the expected dims") {
  BackboneConfig cfg;
  cfg.image_size = 2;
  cfg.patch_size = 1;
  cfg.embed_dim = 4;
  cfg.heads = 1;
  cfg.depth = 2;
  Rng rng(8);
  ParamSet<double> p = init_backbone<double>(cfg, rng);
  randomize(p, rng);
  p.at("blk1.mlp2.b")[0] = std::numeric_limits<double>::infinity();
  TensorD img = random_tensor({1, 3, 2, 2}, rng);
  std::string msg;
  try {
    encode_tokens(p, cfg, img, 1);
  } catch (const std::exception& e) {
    msg = e.what();
  }
  CHECK(msg.find("block 1") != std::string::npos);

  std::string shape_msg;
  try {
    TensorD wrong = random_tensor({1, 3, 4, 4}, rng);
    encode_tokens(p, cfg, wrong, 1);
  } catch (const std::exception& e) {
    shape_msg = e.what();
  }
  CHECK(shape_msg.find("expected 1x3x2x2") != std::string::npos);
  CHECK(shape_msg.find("48") != std::string::npos);
}

TEST_CASE("backbone: gradients match finite differences across 10 seeds") {
  double worst = 0;
  for (uint64_t seed = 0; seed < 10; ++seed) {
    BackboneConfig cfg;
    cfg.image_size = 2;
    cfg.patch_size = 1;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.depth = 2;
    Rng rng(mix64(100, seed));
    ParamSet<double> p = init_backbone<double>(cfg, rng);
    randomize(p, rng);
    TensorD img = random_tensor({2, 3, 2, 2}, rng);
    TensorD weights = random_tensor({2 * 4, 8}, rng);
    auto build = [&](Tape<double>& tape, const GraphParams<double>& w) {
      BackboneTrace trace = build_encode(tape, tape.constant(img), cfg, w, 2);
      return tape.sum(tape.mul(trace.output, tape.constant(weights)));
    };
    Rng pick(mix64(200, seed));
    worst = std::max(worst, fd_check_sampled(p, build, 12, pick));
  }
  MESSAGE("backbone fd worst rel err: ", worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("recon head: zero weights give a zero image") {
  BackboneConfig bb;
  bb.image_size = 4;
  bb.patch_size = 2;
  bb.embed_dim = 6;
  HeadConfig hc;
  hc.hidden = 8;
  hc.bottleneck = 5;
  Rng rng(2);
  ParamSet<double> p = init_recon_head<double>(bb, hc, rng);
  for (size_t i = 0; i < p.size(); ++i) {
    TensorD& t = p.tensor(i);
    for (int64_t j = 0; j < t.numel(); ++j) t[j] = 0;
  }
  Tape<double> tape;
  GraphParams<double> w(tape, p, false);
  int tokens = tape.constant(random_tensor({2 * bb.tokens(), 6}, rng));
  int img = build_reconstruct(tape, tokens, bb, w, 2);
  const TensorD& v = tape.val(img);
  CHECK(v.dim(0) == 2);
  for (int64_t i = 0; i < v.numel(); ++i) CHECK(v[i] == 0.0);
}

TEST_CASE("recon head: output shape is B x 3 x 32 x 32 for the desk config") {
  BackboneConfig bb;  // image 32, patch 4, D 192
  HeadConfig hc;
  hc.hidden = 32;
  hc.bottleneck = 16;
  Rng rng(5);
  ParamSet<float> p = init_recon_head<float>(bb, hc, rng);
  Tape<float> tape;
  GraphParams<float> w(tape, p, false);
  TensorF tokens({2 * 64, 192});
  for (int64_t i = 0; i < tokens.numel(); ++i) tokens[i] = float(rng.uniform(-1.0, 1.0));
  int img = build_reconstruct(tape, tape.constant(tokens), bb, w, 2);
  const TensorF& v = tape.val(img);
  CHECK(v.dim(0) == 2);
  CHECK(v.dim(1) == 3);
  CHECK(v.dim(2) == 32);
  CHECK(v.dim(3) == 32);
  CHECK(v.all_finite());
}

TEST_CASE("recon head: identity kernels reduce to a gelu chain plus patch scatter") {
  BackboneConfig bb;
  bb.image_size = 4;
  bb.patch_size = 2;
  bb.embed_dim = 12;  // equals 3 * patch^2 so identity maps are square
  HeadConfig hc;
  hc.hidden = 12;
  hc.bottleneck = 12;
  Rng rng(9);
  ParamSet<double> p = init_recon_head<double>(bb, hc, rng);
  auto set_eye = [&](const std::string& name) {
    TensorD& t = p.at(name);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = 0;
    for (int64_t i = 0; i < t.rows(); ++i) t.at(i, i) = 1.0;
  };
  auto set_zero = [&](const std::string& name) {
    TensorD& t = p.at(name);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = 0;
  };
  set_eye("pr.fc1.w");
  set_eye("pr.fc2.w");
  set_eye("pr.fc3.w");
  set_eye("pr.out.w");
  set_zero("pr.fc1.b");
  set_zero("pr.fc2.b");
  set_zero("pr.fc3.b");
  set_zero("pr.out.b");

  const int64_t B = 2, n = bb.tokens();
  TensorD tokens = random_tensor({B * n, 12}, rng, 2.0);
  Tape<double> tape;
  GraphParams<double> w(tape, p, false);
  int img = build_reconstruct(tape, tape.constant(tokens), bb, w, B);
  const TensorD& got = tape.val(img);

  // oracle: pixel block of token t is gelu(gelu(token_t)) scattered
  for (int64_t b = 0; b < B; ++b)
    for (int64_t ty = 0; ty < 2; ++ty)
      for (int64_t tx = 0; tx < 2; ++tx)
        for (int64_t c = 0; c < 3; ++c)
          for (int64_t dy = 0; dy < 2; ++dy)
            for (int64_t dx = 0; dx < 2; ++dx) {
              double v = tokens.at(b * n + ty * 2 + tx, c * 4 + dy * 2 + dx);
              double want = gelu_ref(gelu_ref(v));
              double have = got[((b * 3 + c) * 4 + ty * 2 + dy) * 4 + tx * 2 + dx];
              CHECK(have == doctest::Approx(want).epsilon(1e-12));
            }
}

TEST_CASE("concept head: logits live in [-1, 1] and colinear rows hit 1") {
  BackboneConfig bb;
  bb.embed_dim = 8;
  HeadConfig hc;
  hc.hidden = 16;
  hc.bottleneck = 2;
  hc.num_concepts = 4;
  Rng rng(14);
  ParamSet<double> p = init_concept_head<double>(bb, hc, rng);
  randomize(p, rng);
  {
    Tape<double> tape;
    GraphParams<double> w(tape, p, false);
    int logits = build_concept_logits(tape, tape.constant(random_tensor({10, 8}, rng, 3.0)), w);
    const TensorD& z = tape.val(logits);
    CHECK(z.rows() == 10);
    CHECK(z.cols() == 4);
    for (int64_t i = 0; i < z.numel(); ++i) CHECK(std::abs(z[i]) <= 1.0 + 1e-9);
  }

  // zero the MLP and pin the bottleneck to fc3 bias = (3, 4); make concept 0's
  // weight row colinear with it
  for (size_t i = 0; i < p.size(); ++i) {
    TensorD& t = p.tensor(i);
    if (p.names()[i] == "pc.last.w") continue;
    for (int64_t j = 0; j < t.numel(); ++j) t[j] = 0;
  }
  p.at("pc.fc3.b") = TensorD({2}, {3.0, 4.0});
  TensorD& last = p.at("pc.last.w");
  last.at(0, 0) = 30.0;
  last.at(0, 1) = 40.0;
  Tape<double> tape;
  GraphParams<double> w(tape, p, false);
  int logits = build_concept_logits(tape, tape.constant(TensorD({3, 8})), w);
  const TensorD& z = tape.val(logits);
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(z.at(i, 0) == doctest::Approx(1.0).epsilon(1e-6));
    for (int64_t j = 1; j < 4; ++j) CHECK(std::abs(z.at(i, j)) <= 1.0 + 1e-9);
  }
}

TEST_CASE("concept head: matches the explicit normalize-then-matmul oracle") {
  BackboneConfig bb;
  bb.embed_dim = 8;
  HeadConfig hc;
  hc.hidden = 16;
  hc.bottleneck = 8;
  hc.num_concepts = 16;
  Rng rng(23);
  ParamSet<double> p = init_concept_head<double>(bb, hc, rng);
  randomize(p, rng);
  const int64_t rows = 6;
  TensorD tokens = random_tensor({rows, 8}, rng);

  Tape<double> tape;
  GraphParams<double> w(tape, p, false);
  int logits = build_concept_logits(tape, tape.constant(tokens), w);
  const TensorD& got = tape.val(logits);

  // independent re-computation with plain loops
  auto linear = [](const TensorD& x, const TensorD& wt, const TensorD& b, bool apply_gelu) {
    TensorD out({x.rows(), wt.cols()});
    for (int64_t i = 0; i < x.rows(); ++i)
      for (int64_t j = 0; j < wt.cols(); ++j) {
        double acc = b[j];
        for (int64_t k = 0; k < x.cols(); ++k) acc += x.at(i, k) * wt.at(k, j);
        out.at(i, j) = apply_gelu ? gelu_ref(acc) : acc;
      }
    return out;
  };
  TensorD h1 = linear(tokens, p.at("pc.fc1.w"), p.at("pc.fc1.b"), true);
  TensorD h2 = linear(h1, p.at("pc.fc2.w"), p.at("pc.fc2.b"), true);
  TensorD h3 = linear(h2, p.at("pc.fc3.w"), p.at("pc.fc3.b"), false);
  const TensorD& lw = p.at("pc.last.w");
  for (int64_t i = 0; i < rows; ++i) {
    double hn = 0;
    for (int64_t k = 0; k < 8; ++k) hn += h3.at(i, k) * h3.at(i, k);
    hn = std::sqrt(hn + kNormEps);
    for (int64_t j = 0; j < 16; ++j) {
      double wn = 0, dot = 0;
      for (int64_t k = 0; k < 8; ++k) {
        wn += lw.at(j, k) * lw.at(j, k);
        dot += h3.at(i, k) * lw.at(j, k);
      }
      wn = std::sqrt(wn + kNormEps);
      CHECK(got.at(i, j) == doctest::Approx(dot / (hn * wn)).epsilon(1e-9));
    }
  }
}

TEST_CASE("concept head: renormalize_rows restores unit rows") {
  Rng rng(33);
  TensorD w = random_tensor({8, 5}, rng, 4.0);
  renormalize_rows(w);
  for (int64_t i = 0; i < 8; ++i) {
    double s = 0;
    for (int64_t j = 0; j < 5; ++j) s += w.at(i, j) * w.at(i, j);
    CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("pipeline: gradcheck through backbone and both heads") {
  double worst = 0;
  for (uint64_t seed = 0; seed < 2; ++seed) {
    BackboneConfig cfg;
    cfg.image_size = 2;
    cfg.patch_size = 1;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.depth = 2;
    HeadConfig hc;
    hc.hidden = 16;
    hc.bottleneck = 8;
    hc.num_concepts = 8;
    Rng rng(mix64(300, seed));
    ParamSet<double> p = init_backbone<double>(cfg, rng);
    ParamSet<double> pr = init_recon_head<double>(cfg, hc, rng);
    ParamSet<double> pc = init_concept_head<double>(cfg, hc, rng);
    for (size_t i = 0; i < pr.size(); ++i) p.add(pr.names()[i], pr.tensor(i));
    for (size_t i = 0; i < pc.size(); ++i) p.add(pc.names()[i], pc.tensor(i));
    randomize(p, rng);

    const int64_t B = 2, n = cfg.tokens(), K = hc.num_concepts;
    TensorD img = random_tensor({B, 3, 2, 2}, rng);
    TensorD target_probs({B * n, K});
    for (int64_t i = 0; i < B * n; ++i) {
      double sum = 0;
      for (int64_t j = 0; j < K; ++j) {
        target_probs.at(i, j) = rng.uniform(0.05, 1.0);
        sum += target_probs.at(i, j);
      }
      for (int64_t j = 0; j < K; ++j) target_probs.at(i, j) /= sum;
    }
    auto build = [&](Tape<double>& tape, const GraphParams<double>& w) {
      BackboneTrace trace = build_encode(tape, tape.constant(img), cfg, w, B);
      int recon = build_reconstruct(tape, trace.output, cfg, w, B);
      int l_rec = tape.l1_loss(recon, img);
      int logits = build_concept_logits(tape, trace.output, w);
      int l_con = tape.softmax_xent(logits, target_probs, 0.1, double(B * n));
      return tape.axpby(l_con, l_rec, 1.0, 1.0);
    };
    Rng pick(mix64(400, seed));
    worst = std::max(worst, fd_check_sampled(p, build, 6, pick));
  }
  MESSAGE("pipeline fd worst rel err: ", worst);
  CHECK(worst < 1e-4);
}

TEST_CASE("objectives: recon_loss basics and masked oracle") {
  Rng rng(51);
  TensorF x({2, 3, 4, 4});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = float(rng.uniform(-1.0, 1.0));
  CHECK(recon_loss(x, x) == 0.0);

  TensorF zeros({2, 3, 4, 4});
  TensorF ones = TensorF::full({2, 3, 4, 4}, 1.0f);
  CHECK(recon_loss(zeros, ones) == doctest::Approx(1.0).epsilon(1e-12));

  TensorF xr({2, 3, 4, 4});
  for (int64_t i = 0; i < xr.numel(); ++i) xr[i] = float(rng.uniform(-1.0, 1.0));
  TensorF mask({2, 3, 4, 4});
  for (int64_t i = 0; i < mask.numel(); ++i) mask[i] = rng.bernoulli(0.5) ? 1.0f : 0.0f;
  double masked = recon_loss(x, xr, &mask);
  double num = 0, den = 0;
  for (int64_t i = 0; i < x.numel(); ++i)
    if (mask[i] > 0) {
      num += std::abs(double(x[i]) - double(xr[i]));
      den += 1;
    }
  CHECK(masked == doctest::Approx(num / den).epsilon(1e-7));
}

TEST_CASE("objectives: student_probs symmetry, limits, and the frozen softmax") {
  TensorD equal = TensorD::full({3, 4}, 0.7);
  TensorD p = student_probs(equal, 0.1);
  for (int64_t i = 0; i < p.numel(); ++i) CHECK(p[i] == doctest::Approx(0.25).epsilon(1e-12));

  Rng rng(61);
  TensorD z = random_tensor({4, 6}, rng);
  TensorD hot = student_probs(z, 1000.0);
  for (int64_t i = 0; i < hot.numel(); ++i) CHECK(std::abs(hot[i] - 1.0 / 6) < 1e-3);

  TensorD row({1, 3}, {2.0, 1.0, 0.0});
  TensorD probs = student_probs(row, 1.0);
  CHECK(probs[0] == doctest::Approx(0.6652).epsilon(1e-4));
  CHECK(probs[1] == doctest::Approx(0.2447).epsilon(1e-4));
  CHECK(probs[2] == doctest::Approx(0.0900).epsilon(1e-4));

  // rows always normalized
  TensorD any = student_probs(random_tensor({5, 7}, rng, 4.0), 0.04);
  for (int64_t i = 0; i < 5; ++i) {
    double sum = 0;
    for (int64_t j = 0; j < 7; ++j) sum += any.at(i, j);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("objectives: teacher_probs centering behavior") {
  Rng rng(71);
  TensorD z = random_tensor({4, 5}, rng);
  TensorD center({5});
  // zero center reduces to student_probs at tau_t
  TensorD a = teacher_probs(z, center, 0.04);
  TensorD b = student_probs(z, 0.04);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));

  // z == c broadcast gives uniform rows
  TensorD c2({5}, {0.3, -0.2, 1.5, 0.0, -4.0});
  TensorD zc({2, 5});
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 5; ++j) zc.at(i, j) = c2[j];
  TensorD u = teacher_probs(zc, c2, 0.04);
  for (int64_t i = 0; i < u.numel(); ++i) CHECK(u[i] == doctest::Approx(0.2).epsilon(1e-12));

  TensorD row({1, 2}, {1.0, 0.0});
  TensorD c3({2}, {1.0, 0.0});
  TensorD half = teacher_probs(row, c3, 0.04);
  CHECK(half[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(half[1] == doctest::Approx(0.5).epsilon(1e-12));

  // per-row shift invariance
  TensorD shifted = z;
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 5; ++j) shifted.at(i, j) += 3.7;
  TensorD cs = random_tensor({5}, rng);
  TensorD p1 = teacher_probs(z, cs, 0.1);
  TensorD p2 = teacher_probs(shifted, cs, 0.1);
  for (int64_t i = 0; i < p1.numel(); ++i) CHECK(p1[i] == doctest::Approx(p2[i]).epsilon(1e-9));
}

TEST_CASE("objectives: update_center arithmetic and geometric convergence") {
  TensorD c({2});
  TensorD z({4, 2});
  for (int64_t i = 0; i < 4; ++i) {
    z.at(i, 0) = 2.0 + (i - 1.5) * 0.4;  // mean 2
    z.at(i, 1) = -2.0 - (i - 1.5) * 0.4; // mean -2
  }
  TensorD kept = update_center(c, 1.0, z);
  CHECK(kept[0] == 0.0);
  CHECK(kept[1] == 0.0);
  TensorD jumped = update_center(c, 0.0, z);
  CHECK(jumped[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(jumped[1] == doctest::Approx(-2.0).epsilon(1e-12));
  TensorD half = update_center(c, 0.5, z);
  CHECK(half[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(half[1] == doctest::Approx(-1.0).epsilon(1e-12));

  TensorD it({2});
  for (int k = 0; k < 10; ++k) it = update_center(it, 0.9, z);
  double expected = 2.0 * (1.0 - std::pow(0.9, 10));
  CHECK(it[0] == doctest::Approx(expected).epsilon(1e-9));
  CHECK(it[1] == doctest::Approx(-expected).epsilon(1e-9));
}

TEST_CASE("objectives: concept_loss identities, ln 2, and Gibbs") {
  Rng rng(81);
  TensorD p({3, 4});
  for (int64_t i = 0; i < 3; ++i) {
    double sum = 0;
    for (int64_t j = 0; j < 4; ++j) {
      p.at(i, j) = rng.uniform(0.05, 1.0);
      sum += p.at(i, j);
    }
    for (int64_t j = 0; j < 4; ++j) p.at(i, j) /= sum;
  }
  auto mean_row_entropy = [](const TensorD& d) {
    double h = 0;
    for (int64_t i = 0; i < d.rows(); ++i) h += entropy(&d.at(i, 0), d.cols());
    return h / double(d.rows());
  };
  double h = mean_row_entropy(p);
  CHECK(concept_loss(p, p) == doctest::Approx(h).epsilon(1e-12));
  CHECK(h >= 0.0);

  TensorD onehot({1, 3}, {0.0, 1.0, 0.0});
  CHECK(concept_loss(onehot, onehot) == doctest::Approx(0.0).epsilon(1e-9));

  TensorD pt({1, 2}, {1.0, 0.0});
  TensorD ps({1, 2}, {0.5, 0.5});
  CHECK(concept_loss(pt, ps) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  for (int trial = 0; trial < 20; ++trial) {
    TensorD q({3, 4});
    for (int64_t i = 0; i < 3; ++i) {
      double sum = 0;
      for (int64_t j = 0; j < 4; ++j) {
        q.at(i, j) = rng.uniform(0.01, 1.0);
        sum += q.at(i, j);
      }
      for (int64_t j = 0; j < 4; ++j) q.at(i, j) /= sum;
    }
    CHECK(concept_loss(p, q) >= mean_row_entropy(p) - 1e-12);
  }
}

TEST_CASE("objectives: combined_loss arithmetic") {
  CHECK(combined_loss(0.0, 0.0, 1.0) == 0.0);
  CHECK(combined_loss(2.0, 3.0, 1.0) == 5.0);
  CHECK(combined_loss(2.0, 3.0, 0.5) == 4.0);
}

TEST_CASE("objectives: concept gradient is (p_s - p_t) / (rows * tau)") {
  Rng rng(91);
  const int64_t rows = 6, K = 5;
  TensorD z = random_tensor({rows, K}, rng);
  TensorD pt({rows, K});
  for (int64_t i = 0; i < rows; ++i) {
    double sum = 0;
    for (int64_t j = 0; j < K; ++j) {
      pt.at(i, j) = rng.uniform(0.05, 1.0);
      sum += pt.at(i, j);
    }
    for (int64_t j = 0; j < K; ++j) pt.at(i, j) /= sum;
  }
  const double tau = 0.1;
  Tape<double> tape;
  int zl = tape.leaf(z, true);
  int loss = tape.softmax_xent(zl, pt, tau, double(rows));
  tape.backward(loss);
  const TensorD& grad = tape.grad(zl);
  TensorD ps = student_probs(z, tau);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < K; ++j)
      CHECK(grad.at(i, j) ==
            doctest::Approx((ps.at(i, j) - pt.at(i, j)) / (rows * tau)).epsilon(1e-12));
}
