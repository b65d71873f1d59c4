#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mcssl/batcher.hpp"
#include "mcssl/checkpoint.hpp"
#include "mcssl/metrics.hpp"
#include "mcssl/optimizer.hpp"
#include "mcssl/schedule.hpp"
#include "mcssl/vit.hpp"

namespace mcssl {

struct FinetuneConfig {
  std::string task = "multiclass";  // multiclass | multilabel
  std::string mode = "full";        // full | linear | scratch
  int64_t epochs = 20;
  int64_t batch = 64;
  double base_lr = 5e-4;
  double final_lr = 1e-6;
  int64_t warmup_epochs = 2;
  double wd = 0.05;
  double gamma_plus = 0, gamma_minus = 4;  // asymmetric loss exponents
  double threshold = 0.5;
  int64_t hidden = 2048;  // multilabel head width
  double clip_norm = 3.0;

  void validate() const {
    if (task != "multiclass" && task != "multilabel")
      throw std::invalid_argument("task must be multiclass or multilabel");
    if (mode != "full" && mode != "linear" && mode != "scratch")
      throw std::invalid_argument("mode must be full, linear or scratch");
    if (epochs < 0 || batch < 1) throw std::invalid_argument("bad epoch or batch count");
    if (gamma_plus < 0 || gamma_minus < 0)
      throw std::invalid_argument("loss exponents must be nonnegative");
    if (hidden < 1) throw std::invalid_argument("hidden width must be positive");
  }
};

struct FinetuneResult {
  ParamSet<float> backbone;
  ParamSet<float> head;
  double top1 = 0;          // multiclass validation accuracy
  MetricReport metrics;     // multilabel validation report
  std::vector<double> epoch_loss;
};

// Backbone parameters are the names a fresh init_backbone produces; the
// projection heads (pr.*, pc.*) are dropped when adapting a checkpoint.
inline ParamSet<float> strip_heads(const ParamSet<float>& full) {
  ParamSet<float> out;
  for (size_t i = 0; i < full.size(); ++i) {
    const std::string& name = full.names()[i];
    if (name.rfind("pr.", 0) == 0 || name.rfind("pc.", 0) == 0) continue;
    out.add(name, full.tensor(i));
  }
  return out;
}

// Bilinear resampling of the n x D positional table from one square token
// grid to another; identity when the grids already match.
inline TensorF interpolate_positional(const TensorF& pos, int64_t g_old, int64_t g_new) {
  if (pos.rows() != g_old * g_old)
    throw std::invalid_argument("interpolate_positional: table does not match the source grid");
  if (g_old == g_new) return pos;
  int64_t d = pos.cols();
  TensorF out({g_new * g_new, d});
  for (int64_t y = 0; y < g_new; ++y)
    for (int64_t x = 0; x < g_new; ++x) {
      double sy = g_new > 1 ? static_cast<double>(y) * (g_old - 1) / (g_new - 1) : 0.0;
      double sx = g_new > 1 ? static_cast<double>(x) * (g_old - 1) / (g_new - 1) : 0.0;
      int64_t y0 = static_cast<int64_t>(sy), x0 = static_cast<int64_t>(sx);
      int64_t y1 = std::min(y0 + 1, g_old - 1), x1 = std::min(x0 + 1, g_old - 1);
      double fy = sy - y0, fx = sx - x0;
      for (int64_t j = 0; j < d; ++j) {
        double v00 = pos.at(y0 * g_old + x0, j), v01 = pos.at(y0 * g_old + x1, j);
        double v10 = pos.at(y1 * g_old + x0, j), v11 = pos.at(y1 * g_old + x1, j);
        out.at(y * g_new + x, j) = static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                                      fy * ((1 - fx) * v10 + fx * v11));
      }
    }
  return out;
}

// Loads the TEACHER backbone out of a pretraining checkpoint, resampling the
// positional table if the target resolution differs.
inline ParamSet<float> backbone_from_checkpoint(const Checkpoint& ck, const BackboneConfig& bb) {
  const ParamSet<float>* teacher = ck.find_section("teacher");
  if (!teacher) throw std::runtime_error("checkpoint has no teacher section");
  ParamSet<float> backbone = strip_heads(*teacher);
  TensorF& pos = backbone.at("pos");
  int64_t g_old = 1;
  while (g_old * g_old < pos.rows()) ++g_old;
  if (g_old * g_old != pos.rows())
    throw std::runtime_error("checkpoint positional table is not a square grid");
  if (g_old != bb.grid()) pos = interpolate_positional(pos, g_old, bb.grid());
  ParamSet<float> expect;
  {
    Rng rng(0);
    expect = init_backbone<float>(bb, rng);
  }
  if (!backbone.shape_congruent(expect))
    throw std::runtime_error("checkpoint backbone does not match the configured model");
  return backbone;
}

template <typename T>
ParamSet<T> init_task_head(const BackboneConfig& bb, const FinetuneConfig& fc, int64_t classes,
                           Rng& rng) {
  if (classes < 1) throw std::invalid_argument("task head needs at least one class");
  ParamSet<T> p;
  auto winit = [&rng](std::vector<int64_t> shape) {
    Tensor<T> t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.trunc_normal(0.02));
    return t;
  };
  if (fc.task == "multiclass") {
    p.add("head.w", winit({bb.embed_dim, classes}));
    p.add("head.b", Tensor<T>({classes}));
  } else {
    p.add("head.fc.w", winit({bb.embed_dim, fc.hidden}));
    p.add("head.fc.b", Tensor<T>({fc.hidden}));
    p.add("head.out.w", winit({fc.hidden, classes}));
    p.add("head.out.b", Tensor<T>({classes}));
  }
  return p;
}

// Mean over the n data tokens, then the task head. Multiclass: one linear
// map. Multilabel: hidden GeLU layer then a linear map (sigmoid lives in the
// loss / the metric pass).
template <typename T>
int build_task_logits(Tape<T>& tape, int tokens, const BackboneConfig& bb,
                      const FinetuneConfig& fc, const GraphParams<T>& w, int64_t batch) {
  int pooled = tape.mean_rows(tokens, batch, bb.tokens());
  if (fc.task == "multiclass")
    return tape.add_bias(tape.matmul(pooled, w.at("head.w")), w.at("head.b"));
  int h = tape.gelu(tape.add_bias(tape.matmul(pooled, w.at("head.fc.w")), w.at("head.fc.b")));
  return tape.add_bias(tape.matmul(h, w.at("head.out.w")), w.at("head.out.b"));
}

inline TensorD sigmoid_rows(const TensorD& z) {
  TensorD p(z.shape());
  for (int64_t i = 0; i < z.numel(); ++i) p[i] = 1.0 / (1.0 + std::exp(-z[i]));
  return p;
}

// Forward a whole manifest deterministically (identity augmentation) and
// return task logits; used for validation passes.
inline TensorD eval_logits(const ParamSet<float>& backbone, const ParamSet<float>& head,
                           const BackboneConfig& bb, const FinetuneConfig& fc, Batcher& data) {
  int64_t n_entries = 0;
  int64_t per = data.batches_per_epoch();
  AugmentPolicy eval_policy;
  eval_policy.crop_lo = 1.0;
  eval_policy.crop_hi = 1.0;
  eval_policy.hflip_prob = 0;
  eval_policy.jitter_strength = 0;
  eval_policy.grayscale_prob = 0;
  eval_policy.blur_prob = 0;
  std::vector<std::pair<int64_t, std::vector<double>>> rows;
  int64_t classes = -1;
  for (int64_t b = 0; b < per; ++b) {
    ImageBatch batch = data.make_batch(0, b, 0, 0, &eval_policy);
    int64_t B = batch.batch();
    Tape<float> tape;
    GraphParams<float> wb(tape, backbone, false);
    GraphParams<float> wh(tape, head, false);
    BackboneTrace trace = build_encode(tape, tape.constant(batch.data), bb, wb, B);
    int logits = build_task_logits(tape, trace.output, bb, fc, wh, B);
    const TensorF& z = tape.val(logits);
    classes = z.cols();
    for (int64_t i = 0; i < B; ++i) {
      std::vector<double> row(static_cast<size_t>(classes));
      for (int64_t j = 0; j < classes; ++j) row[static_cast<size_t>(j)] = z.at(i, j);
      rows.emplace_back(batch.ids[static_cast<size_t>(i)], std::move(row));
    }
    n_entries += B;
  }
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  TensorD all({n_entries, classes});
  for (int64_t i = 0; i < n_entries; ++i)
    for (int64_t j = 0; j < classes; ++j)
      all.at(i, j) = rows[static_cast<size_t>(i)].second[static_cast<size_t>(j)];
  return all;
}

// End-to-end downstream adaptation. The backbone argument is the pretrained
// teacher backbone ("full"/"linear" modes) or a fresh initialization
// ("scratch"); "linear" freezes it and trains only the head.
inline FinetuneResult finetune_run(
    ParamSet<float> backbone, const BackboneConfig& bb, const FinetuneConfig& fc,
    Batcher& train_data, Batcher& val_data, int64_t classes, uint64_t seed,
    const std::function<void(int64_t, double)>& on_epoch = nullptr) {
  fc.validate();
  Rng rng(mix64(seed, 0xF17EULL));
  ParamSet<float> head = init_task_head<float>(bb, fc, classes, rng);
  bool train_backbone = fc.mode != "linear";
  AdamW<float> opt_backbone(backbone);
  AdamW<float> opt_head(head);
  int64_t per_epoch = train_data.batches_per_epoch();
  int64_t total_steps = std::max<int64_t>(1, fc.epochs * per_epoch);
  int64_t warmup_steps = fc.warmup_epochs * per_epoch;

  FinetuneResult res;
  int64_t step = 0;
  for (int64_t e = 0; e < fc.epochs; ++e) {
    double epoch_loss = 0;
    for (int64_t b = 0; b < per_epoch; ++b) {
      ImageBatch batch = train_data.make_batch(e, b);
      int64_t B = batch.batch();
      SchedulerState sched{step, total_steps};
      double lr = warmup_cosine_lr(fc.base_lr, fc.final_lr, warmup_steps, sched);

      Tape<float> tape;
      GraphParams<float> wb(tape, backbone, train_backbone);
      GraphParams<float> wh(tape, head, true);
      BackboneTrace trace = build_encode(tape, tape.constant(batch.data), bb, wb, B);
      int logits = build_task_logits(tape, trace.output, bb, fc, wh, B);
      int loss;
      if (fc.task == "multiclass") {
        if (batch.kind != LabelKind::class_index)
          throw std::invalid_argument("multiclass finetuning needs class-index labels");
        TensorF targets({B, classes});
        for (int64_t i = 0; i < B; ++i) {
          int64_t y = batch.class_labels[static_cast<size_t>(i)];
          if (y < 0 || y >= classes)
            throw std::invalid_argument("label out of range for the configured class count");
          targets.at(i, y) = 1.f;
        }
        loss = tape.softmax_xent(logits, std::move(targets), 1.f, static_cast<float>(B));
      } else {
        if (batch.kind != LabelKind::label_vector)
          throw std::invalid_argument("multilabel finetuning needs label-vector targets");
        if (batch.label_vectors.cols() != classes)
          throw std::invalid_argument("label width does not match the configured class count");
        loss = tape.asl_loss(logits, batch.label_vectors, static_cast<float>(fc.gamma_plus),
                             static_cast<float>(fc.gamma_minus));
      }
      double lval = tape.val(loss)[0];
      if (!std::isfinite(lval))
        throw std::runtime_error("loss is not finite at finetune step " + std::to_string(step));
      epoch_loss += lval;
      tape.backward(loss);
      ParamSet<float> ghead = wh.gradients(head);
      if (train_backbone) {
        ParamSet<float> gback = wb.gradients(backbone);
        clip_global_norm(gback, fc.clip_norm);
        opt_backbone.step(backbone, gback, lr, fc.wd);
      }
      clip_global_norm(ghead, fc.clip_norm);
      opt_head.step(head, ghead, lr, fc.wd);
      ++step;
    }
    epoch_loss /= static_cast<double>(per_epoch);
    res.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(e, epoch_loss);
  }

  TensorD val_logits = eval_logits(backbone, head, bb, fc, val_data);
  if (fc.task == "multiclass") {
    std::vector<int64_t> labels = val_data.all_class_labels();
    res.top1 = top1_accuracy(val_logits, labels);
  } else {
    TensorD targets = val_data.all_label_vectors();
    res.metrics = multilabel_metrics(sigmoid_rows(val_logits), targets, fc.threshold);
  }
  res.backbone = std::move(backbone);
  res.head = std::move(head);
  return res;
}

}  // namespace mcssl
