#include "mcssl/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mcssl {

const std::vector<ConfigKey>& config_registry() {
  static const std::vector<ConfigKey> keys = {
      {"seed", "0", "global RNG seed; every run is a pure function of it"},
      {"workdir", ".", "base directory for relative input and output paths"},
      {"threads", "0", "intra-op thread cap; 0 defers to MCSSL_THREADS (default 1)"},

      {"model.image", "32", "input resolution (square)"},
      {"model.patch", "4", "patch / token size in pixels"},
      {"model.dim", "192", "transformer embedding width"},
      {"model.depth", "4", "number of transformer blocks"},
      {"model.heads", "3", "attention heads per block"},
      {"model.mlp_ratio", "4.0", "MLP hidden width as a multiple of model.dim"},
      {"model.hidden", "2048", "projection-head hidden width"},
      {"model.bottleneck", "256", "projection-head bottleneck width"},
      {"model.concepts", "1024", "number of patch concepts K"},

      {"corruption.fraction", "0.6", "per-image corruption budget (drawn up to this fraction)"},
      {"corruption.drop_share", "0.7", "share of corrupted blocks filled with noise vs donor patches"},
      {"corruption.block_min", "1", "smallest corruption rectangle side, in tokens"},
      {"corruption.block_max", "4", "largest corruption rectangle side, in tokens"},

      {"aug.crop_lo", "0.4", "random-resized-crop minimum area fraction"},
      {"aug.crop_hi", "1.0", "random-resized-crop maximum area fraction"},
      {"aug.hflip", "0.5", "horizontal flip probability"},
      {"aug.jitter", "0.4", "color jitter strength"},
      {"aug.grayscale", "0.2", "grayscale probability"},
      {"aug.blur", "0.1", "gaussian blur probability"},

      {"train.epochs", "500", "pretraining epochs"},
      {"train.batch", "64", "pretraining batch size"},
      {"train.base_lr", "5e-4", "peak learning rate after warmup"},
      {"train.final_lr", "1e-6", "cosine-decay floor"},
      {"train.warmup_epochs", "10", "linear lr warmup length"},
      {"train.wd_start", "0.04", "weight decay at step 0 (cosine to wd_end)"},
      {"train.wd_end", "0.4", "weight decay at the final step"},
      {"train.lambda_start", "0.996", "teacher EMA momentum at step 0 (cosine to lambda_end)"},
      {"train.lambda_end", "1.0", "teacher EMA momentum at the final step"},
      {"train.tau_t", "0.04", "teacher softmax temperature (sharpening)"},
      {"train.tau_s", "0.1", "student softmax temperature"},
      {"train.center_momentum", "0.9", "EMA momentum of the teacher-logit center"},
      {"train.weight_recon", "1.0", "weight of the reconstruction term in the combined loss"},
      {"train.clip", "3.0", "global gradient-norm clip; 0 disables"},
      {"train.objective", "pc+pr", "loss composition: pc+pr, pc, or pr"},
      {"train.checkpoint_every", "10", "epochs between checkpoints (ends are always written)"},
      {"train.collapse_div", "8", "warn when teacher entropy < log(K)/this for 100 steps"},
      {"train.recon_masked_only", "false", "restrict the reconstruction loss to corrupted pixels"},
      {"train.concept_masked_only", "false", "restrict the concept loss to corrupted tokens"},
      {"train.out", "checkpoint.mcssl", "checkpoint path (suffixed per epoch snapshot)"},
      {"train.log", "train_log.jsonl", "JSON-lines step log path"},

      {"data.manifest", "", "training manifest path"},
      {"data.val_manifest", "", "held-out manifest path"},

      {"finetune.task", "multiclass", "downstream task: multiclass or multilabel"},
      {"finetune.mode", "full", "adaptation mode: full, linear, or scratch"},
      {"finetune.epochs", "20", "finetuning epochs"},
      {"finetune.batch", "64", "finetuning batch size"},
      {"finetune.base_lr", "5e-4", "finetuning peak learning rate"},
      {"finetune.final_lr", "1e-6", "finetuning cosine floor"},
      {"finetune.warmup_epochs", "2", "finetuning warmup length"},
      {"finetune.wd", "0.05", "finetuning weight decay (constant)"},
      {"finetune.gamma_plus", "0", "asymmetric-loss positive focusing exponent"},
      {"finetune.gamma_minus", "4", "asymmetric-loss negative focusing exponent"},
      {"finetune.threshold", "0.5", "multilabel decision threshold"},
      {"finetune.hidden", "2048", "multilabel head hidden width"},
      {"finetune.checkpoint", "", "pretraining checkpoint to adapt"},
      {"finetune.out", "finetuned.mcssl", "finetuned model output path"},
      {"finetune.metrics", "metrics.json", "metric report output path"},

      {"eval.checkpoint", "", "finetuned checkpoint to evaluate"},
      {"eval.out", "metrics.json", "metric report output path"},

      {"viz.checkpoint", "", "pretraining checkpoint to visualize"},
      {"viz.clusters", "2,3,4", "comma-separated k values for the cluster overlays"},
      {"viz.alpha", "0.5", "overlay tint strength in [0, 1]"},
      {"viz.out", "viz", "output directory for overlays and histograms"},
      {"viz.source", "teacher", "feature source: teacher or student"},
      {"viz.count", "4", "number of images to visualize"},
  };
  return keys;
}

RunConfig RunConfig::defaults() {
  RunConfig cfg;
  for (const ConfigKey& k : config_registry()) cfg.values_[k.key] = k.def;
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key: " + key);
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::invalid_argument("unknown config key: " + key);
  return it->second;
}

int64_t RunConfig::get_int(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config value for " + key + " is not an integer: " + v);
  }
}

double RunConfig::get_real(const std::string& key) const {
  const std::string& v = get(key);
  try {
    size_t pos = 0;
    double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw std::invalid_argument("config value for " + key + " is not a number: " + v);
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config value for " + key + " is not a boolean: " + v);
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  const std::string& v = get(key);
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t pos = 0;
      int r = std::stoi(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(r);
    } catch (const std::exception&) {
      throw std::invalid_argument("config value for " + key + " is not an integer list: " + v);
    }
  }
  if (out.empty()) throw std::invalid_argument("config value for " + key + " is empty");
  return out;
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) {
    out += k;
    out += '=';
    out += v;
    out += '\n';
  }
  return out;
}

uint64_t fnv1a64(const std::string& text) {
  uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

uint64_t RunConfig::fingerprint() const { return fnv1a64(canonical()); }

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // strip comments outside quotes
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line = line.substr(0, i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
      value = value.substr(1, value.size() - 2);
    if (!section.empty()) key = section + "." + key;
    try {
      cfg.set(key, value);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

BackboneConfig backbone_from(const RunConfig& cfg) {
  BackboneConfig bb;
  bb.image_size = cfg.get_int("model.image");
  bb.patch_size = cfg.get_int("model.patch");
  bb.embed_dim = cfg.get_int("model.dim");
  bb.depth = cfg.get_int("model.depth");
  bb.heads = cfg.get_int("model.heads");
  bb.mlp_ratio = cfg.get_real("model.mlp_ratio");
  bb.validate();
  return bb;
}

HeadConfig heads_from(const RunConfig& cfg) {
  HeadConfig hc;
  hc.hidden = cfg.get_int("model.hidden");
  hc.bottleneck = cfg.get_int("model.bottleneck");
  hc.num_concepts = cfg.get_int("model.concepts");
  hc.validate();
  return hc;
}

CorruptionConfig corruption_from(const RunConfig& cfg) {
  CorruptionConfig cc;
  cc.target_fraction = cfg.get_real("corruption.fraction");
  cc.drop_share = cfg.get_real("corruption.drop_share");
  cc.block_min = cfg.get_int("corruption.block_min");
  cc.block_max = cfg.get_int("corruption.block_max");
  cc.patch = cfg.get_int("model.patch");
  cc.validate();
  return cc;
}

TrainConfig train_from(const RunConfig& cfg) {
  TrainConfig tc;
  tc.epochs = cfg.get_int("train.epochs");
  tc.batch = cfg.get_int("train.batch");
  tc.base_lr = cfg.get_real("train.base_lr");
  tc.final_lr = cfg.get_real("train.final_lr");
  tc.warmup_epochs = cfg.get_int("train.warmup_epochs");
  tc.wd_start = cfg.get_real("train.wd_start");
  tc.wd_end = cfg.get_real("train.wd_end");
  tc.lambda_start = cfg.get_real("train.lambda_start");
  tc.lambda_end = cfg.get_real("train.lambda_end");
  tc.tau_t = cfg.get_real("train.tau_t");
  tc.tau_s = cfg.get_real("train.tau_s");
  tc.center_momentum = cfg.get_real("train.center_momentum");
  tc.weight_recon = cfg.get_real("train.weight_recon");
  tc.clip_norm = cfg.get_real("train.clip");
  tc.objective = cfg.get("train.objective");
  tc.checkpoint_every = cfg.get_int("train.checkpoint_every");
  tc.collapse_div = cfg.get_real("train.collapse_div");
  tc.recon_masked_only = cfg.get_bool("train.recon_masked_only");
  tc.concept_masked_only = cfg.get_bool("train.concept_masked_only");
  tc.validate();
  return tc;
}

FinetuneConfig finetune_from(const RunConfig& cfg) {
  FinetuneConfig fc;
  fc.task = cfg.get("finetune.task");
  fc.mode = cfg.get("finetune.mode");
  fc.epochs = cfg.get_int("finetune.epochs");
  fc.batch = cfg.get_int("finetune.batch");
  fc.base_lr = cfg.get_real("finetune.base_lr");
  fc.final_lr = cfg.get_real("finetune.final_lr");
  fc.warmup_epochs = cfg.get_int("finetune.warmup_epochs");
  fc.wd = cfg.get_real("finetune.wd");
  fc.gamma_plus = cfg.get_real("finetune.gamma_plus");
  fc.gamma_minus = cfg.get_real("finetune.gamma_minus");
  fc.threshold = cfg.get_real("finetune.threshold");
  fc.hidden = cfg.get_int("finetune.hidden");
  fc.validate();
  return fc;
}

AugmentPolicy augment_from(const RunConfig& cfg) {
  AugmentPolicy p;
  p.crop_lo = cfg.get_real("aug.crop_lo");
  p.crop_hi = cfg.get_real("aug.crop_hi");
  p.hflip_prob = cfg.get_real("aug.hflip");
  p.jitter_strength = cfg.get_real("aug.jitter");
  p.grayscale_prob = cfg.get_real("aug.grayscale");
  p.blur_prob = cfg.get_real("aug.blur");
  return p;
}

}  // namespace mcssl
