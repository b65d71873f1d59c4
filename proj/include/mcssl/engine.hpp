#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcssl/batcher.hpp"
#include "mcssl/checkpoint.hpp"
#include "mcssl/corruption.hpp"
#include "mcssl/ema.hpp"
#include "mcssl/heads.hpp"
#include "mcssl/objectives.hpp"
#include "mcssl/optimizer.hpp"
#include "mcssl/schedule.hpp"
#include "mcssl/vit.hpp"

namespace mcssl {

struct TrainConfig {
  int64_t epochs = 500;
  int64_t batch = 64;
  double base_lr = 5e-4;
  double final_lr = 1e-6;
  int64_t warmup_epochs = 10;
  double wd_start = 0.04, wd_end = 0.4;
  double lambda_start = 0.996, lambda_end = 1.0;
  double tau_t = 0.04, tau_s = 0.1;
  double center_momentum = 0.9;
  double weight_recon = 1.0;
  double clip_norm = 3.0;          // 0 disables clipping
  std::string objective = "pc+pr"; // pc+pr | pc | pr
  int64_t checkpoint_every = 10;   // epochs between snapshots; 0 = ends only
  double collapse_div = 8.0;       // warn when teacher entropy < log(K)/div
  bool recon_masked_only = false;
  bool concept_masked_only = false;

  bool use_pc() const { return objective == "pc+pr" || objective == "pc"; }
  bool use_pr() const { return objective == "pc+pr" || objective == "pr"; }
  void validate() const {
    if (epochs < 0 || batch < 1) throw std::invalid_argument("bad epoch or batch count");
    if (base_lr <= 0 || tau_t <= 0 || tau_s <= 0) throw std::invalid_argument("rates must be positive");
    if (lambda_start < 0 || lambda_start > 1 || lambda_end < 0 || lambda_end > 1)
      throw std::invalid_argument("lambda schedule must stay in [0, 1]");
    if (center_momentum < 0 || center_momentum >= 1)
      throw std::invalid_argument("center momentum must be in [0, 1)");
    if (objective != "pc+pr" && objective != "pc" && objective != "pr")
      throw std::invalid_argument("objective must be pc+pr, pc or pr");
    if (warmup_epochs < 0 || warmup_epochs > epochs)
      throw std::invalid_argument("warmup must fit inside the epoch budget");
  }
};

struct StepStats {
  int64_t step = 0;
  double l_recon = 0, l_concept = 0, l_total = 0;
  double teacher_entropy = 0;
  double lr = 0, wd = 0, lambda_v = 0, grad_norm = 0;
  bool collapse_warning = false;
};

struct EpochStats {
  int64_t epoch = 0;
  double mean_recon = 0, mean_concept = 0, mean_total = 0;
  double min_entropy = 0;
};

// Owns the student, its EMA teacher, the optimizer and the center. One step =
// teacher forward on the clean batch, student forward on its corrupted twin,
// combined loss, clipped AdamW step, weight renormalization, EMA and center
// updates.
class PretrainEngine {
 public:
  PretrainEngine(const BackboneConfig& bb, const HeadConfig& hc, const CorruptionConfig& cc,
                 const TrainConfig& tc, uint64_t seed, uint64_t fingerprint = 0)
      : bb_(bb), hc_(hc), cc_(cc), tc_(tc), seed_(seed), fingerprint_(fingerprint) {
    bb_.validate();
    hc_.validate();
    cc_.validate();
    tc_.validate();
    Rng rng(mix64(seed, 0x1417ULL));
    student_ = init_backbone<float>(bb_, rng);
    ParamSet<float> pr = init_recon_head<float>(bb_, hc_, rng);
    ParamSet<float> pc = init_concept_head<float>(bb_, hc_, rng);
    for (size_t i = 0; i < pr.size(); ++i) student_.add(pr.names()[i], pr.tensor(i));
    for (size_t i = 0; i < pc.size(); ++i) student_.add(pc.names()[i], pc.tensor(i));
    renormalize_rows(student_.at("pc.last.w"));
    teacher_ = student_;  // structural clone at step 0
    opt_ = std::make_unique<AdamW<float>>(student_);
    center_ = TensorD({hc_.num_concepts});
    total_steps_ = 1;
  }

  void set_total_steps(int64_t total, int64_t steps_per_epoch) {
    if (total < 1) total = 1;
    total_steps_ = total;
    warmup_steps_ = tc_.warmup_epochs * steps_per_epoch;
  }

  StepStats step(const TensorF& clean, const std::array<float, 3>& noise_lo,
                 const std::array<float, 3>& noise_hi) {
    const int64_t B = clean.dim(0);
    const int64_t n = bb_.tokens();
    SchedulerState sched{step_, total_steps_};
    StepStats st;
    st.step = step_;
    st.lr = warmup_cosine_lr(tc_.base_lr, tc_.final_lr, warmup_steps_, sched);
    st.wd = cosine_value(tc_.wd_start, tc_.wd_end, sched);
    st.lambda_v = cosine_value(tc_.lambda_start, tc_.lambda_end, sched);

    // teacher forward on the clean images; logits never carry gradients
    TensorD z_t;
    TensorD p_t;
    if (tc_.use_pc()) {
      Tape<float> ttape;
      GraphParams<float> tw(ttape, teacher_, false);
      BackboneTrace ttrace = build_encode(ttape, ttape.constant(clean), bb_, tw, B);
      int tlogits = build_concept_logits(ttape, ttrace.output, tw);
      z_t = ttape.val(tlogits).cast<double>();
      p_t = teacher_probs(z_t, center_, tc_.tau_t);
      st.teacher_entropy = mean_distribution_entropy(p_t);
    }

    CorruptionOutcome co = corrupt(clean, cc_, mix64(seed_, 0xC0DEULL, static_cast<uint64_t>(step_)),
                                   noise_lo, noise_hi);

    Tape<float> tape;
    GraphParams<float> w(tape, student_, true);
    BackboneTrace trace = build_encode(tape, tape.constant(co.corrupted), bb_, w, B);
    int loss_recon = -1, loss_concept = -1;
    if (tc_.use_pr()) {
      int recon = build_reconstruct(tape, trace.output, bb_, w, B);
      if (tc_.recon_masked_only) {
        TensorF mask(clean.shape());
        const int64_t C = clean.dim(1), H = clean.dim(2), W = clean.dim(3);
        for (int64_t b = 0; b < B; ++b)
          for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < H * W; ++i)
              mask[(b * C + c) * H * W + i] =
                  co.pixel_mask[static_cast<size_t>(b * H * W + i)] ? 1.f : 0.f;
        loss_recon = tape.l1_loss(recon, clean, &mask);
      } else {
        loss_recon = tape.l1_loss(recon, clean);
      }
      st.l_recon = tape.val(loss_recon)[0];
    }
    if (tc_.use_pc()) {
      int logits = build_concept_logits(tape, trace.output, w);
      TensorF targets = p_t.cast<float>();
      if (tc_.concept_masked_only) {
        loss_concept = tape.softmax_xent_rows(logits, std::move(targets),
                                              static_cast<float>(tc_.tau_s), co.token_mask);
      } else {
        loss_concept = tape.softmax_xent(logits, std::move(targets), static_cast<float>(tc_.tau_s),
                                         static_cast<float>(B * n));
      }
      st.l_concept = tape.val(loss_concept)[0];
    }
    int total;
    if (loss_recon >= 0 && loss_concept >= 0)
      total = tape.axpby(loss_concept, loss_recon, 1.f, static_cast<float>(tc_.weight_recon));
    else if (loss_concept >= 0)
      total = loss_concept;
    else
      total = tape.axpby(loss_recon, loss_recon, static_cast<float>(tc_.weight_recon), 0.f);
    st.l_total = tape.val(total)[0];
    if (!std::isfinite(st.l_total))
      throw std::runtime_error("loss is not finite at step " + std::to_string(step_));

    tape.backward(total);
    ParamSet<float> grads = w.gradients(student_);
    st.grad_norm = clip_global_norm(grads, tc_.clip_norm);
    opt_->step(student_, grads, st.lr, st.wd);
    if (tc_.use_pc()) renormalize_rows(student_.at("pc.last.w"));

    ema_update(teacher_, student_, static_cast<float>(st.lambda_v));
    if (tc_.use_pc()) {
      center_ = update_center(center_, tc_.center_momentum, z_t);
      double floor = std::log(static_cast<double>(hc_.num_concepts)) / tc_.collapse_div;
      collapse_run_ = st.teacher_entropy < floor ? collapse_run_ + 1 : 0;
      st.collapse_warning = collapse_run_ >= 100;
    }
    ++step_;
    return st;
  }

  Checkpoint make_checkpoint(int64_t epoch) const {
    Checkpoint ck;
    ck.fingerprint = fingerprint_;
    ck.scalars["epoch"] = epoch;
    ck.scalars["opt_t"] = opt_->steps_taken();
    ck.scalars["step"] = step_;
    ck.scalars["total_steps"] = total_steps_;
    ck.scalars["warmup_steps"] = warmup_steps_;
    ck.section("student") = student_;
    ck.section("teacher") = teacher_;
    ck.section("opt_m") = opt_->moments_m();
    ck.section("opt_v") = opt_->moments_v();
    ParamSet<float> state;
    state.add("center", center_.cast<float>());
    ck.section("state") = state;
    return ck;
  }

  void restore(const Checkpoint& ck) {
    const ParamSet<float>* st = ck.find_section("student");
    const ParamSet<float>* te = ck.find_section("teacher");
    const ParamSet<float>* m = ck.find_section("opt_m");
    const ParamSet<float>* v = ck.find_section("opt_v");
    const ParamSet<float>* state = ck.find_section("state");
    if (!st || !te || !m || !v || !state)
      throw std::runtime_error("checkpoint is missing a training section");
    if (!student_.shape_congruent(*st) || !teacher_.shape_congruent(*te))
      throw std::runtime_error("checkpoint parameters do not match the configured model");
    student_ = *st;
    teacher_ = *te;
    opt_ = std::make_unique<AdamW<float>>(*m, *v, ck.scalar("opt_t"));
    center_ = state->at("center").cast<double>();
    step_ = ck.scalar("step");
    total_steps_ = ck.scalar("total_steps", 1);
    warmup_steps_ = ck.scalar("warmup_steps");
  }

  const ParamSet<float>& student() const { return student_; }
  const ParamSet<float>& teacher() const { return teacher_; }
  const TensorD& center() const { return center_; }
  int64_t steps_done() const { return step_; }
  const BackboneConfig& backbone_config() const { return bb_; }
  const HeadConfig& head_config() const { return hc_; }

 private:
  BackboneConfig bb_;
  HeadConfig hc_;
  CorruptionConfig cc_;
  TrainConfig tc_;
  uint64_t seed_;
  uint64_t fingerprint_;
  ParamSet<float> student_;
  ParamSet<float> teacher_;
  std::unique_ptr<AdamW<float>> opt_;
  TensorD center_;
  int64_t step_ = 0;
  int64_t total_steps_ = 1;
  int64_t warmup_steps_ = 0;
  int64_t collapse_run_ = 0;
};

// Full pretraining loop over a Batcher. Emits the initial checkpoint before
// any step, one every `checkpoint_every` epochs, and the final state.
inline std::vector<EpochStats> pretrain_run(
    PretrainEngine& engine, Batcher& data, const TrainConfig& tc,
    const std::function<void(const StepStats&)>& on_step = nullptr,
    const std::function<void(int64_t, const Checkpoint&)>& on_checkpoint = nullptr) {
  int64_t per_epoch = data.batches_per_epoch();
  engine.set_total_steps(tc.epochs * per_epoch, per_epoch);
  if (on_checkpoint) on_checkpoint(0, engine.make_checkpoint(0));
  std::vector<EpochStats> epochs;
  for (int64_t e = 0; e < tc.epochs; ++e) {
    EpochStats es;
    es.epoch = e;
    es.min_entropy = std::numeric_limits<double>::max();
    for (int64_t b = 0; b < per_epoch; ++b) {
      ImageBatch batch = data.make_batch(e, b);
      StepStats st = engine.step(batch.data, data.norm_lo(), data.norm_hi());
      if (on_step) on_step(st);
      es.mean_recon += st.l_recon;
      es.mean_concept += st.l_concept;
      es.mean_total += st.l_total;
      es.min_entropy = std::min(es.min_entropy, st.teacher_entropy);
    }
    es.mean_recon /= static_cast<double>(per_epoch);
    es.mean_concept /= static_cast<double>(per_epoch);
    es.mean_total /= static_cast<double>(per_epoch);
    epochs.push_back(es);
    bool last = e + 1 == tc.epochs;
    if (on_checkpoint && (last || (tc.checkpoint_every > 0 && (e + 1) % tc.checkpoint_every == 0)))
      on_checkpoint(e + 1, engine.make_checkpoint(e + 1));
  }
  return epochs;
}

}  // namespace mcssl
