#pragma once

#include <cstdio>
#include <memory>
#include <mutex>

#include "mcssl/augment.hpp"
#include "mcssl/io_image.hpp"
#include "mcssl/manifest.hpp"
#include "mcssl/rng.hpp"
#include "mcssl/tensor.hpp"
#include "mcssl/threads.hpp"

namespace mcssl {

// One batch of normalized images in B x C x H x W layout.
struct ImageBatch {
  TensorF data;
  std::vector<int64_t> ids;            // manifest entry indices
  LabelKind kind = LabelKind::none;
  std::vector<int64_t> class_labels;   // multi-class targets
  TensorF label_vectors;               // B x c multi-label targets

  int64_t batch() const { return static_cast<int64_t>(ids.size()); }
};

// Deterministic, seeded batch producer. Each epoch visits a seeded
// permutation of the manifest once; the augmentation of a sample is a pure
// function of (seed, epoch, entry index, view). Decoded sources are cached.
class Batcher {
 public:
  Batcher(const DatasetManifest& manifest, AugmentPolicy policy, int64_t batch_size,
          int64_t image_size, uint64_t seed, bool skip_bad_decode = false)
      : manifest_(&manifest),
        policy_(policy),
        batch_size_(batch_size),
        image_size_(image_size),
        seed_(seed),
        skip_bad_(skip_bad_decode),
        cache_(manifest.entries.size()) {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    policy_.validate();
  }

  int64_t num_entries() const { return static_cast<int64_t>(manifest_->entries.size()); }

  int64_t batches_per_epoch() const {
    return (num_entries() + batch_size_ - 1) / batch_size_;
  }

  const std::array<float, 3>& mean() const { return manifest_->mean; }
  const std::array<float, 3>& stdev() const { return manifest_->stdev; }

  // Epoch permutation: seeded shuffle, each entry exactly once.
  std::vector<int64_t> epoch_order(int64_t epoch) const {
    std::vector<int64_t> order(static_cast<size_t>(num_entries()));
    for (int64_t i = 0; i < num_entries(); ++i) order[static_cast<size_t>(i)] = i;
    Rng rng(mix64(seed_, 0x9Au, static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    return order;
  }

  // view distinguishes multi-crop views of one sample; view 0 is the
  // canonical view. size overrides the output resolution for local crops.
  ImageBatch make_batch(int64_t epoch, int64_t batch_index, int view = 0,
                        int64_t size_override = 0, const AugmentPolicy* policy_override = nullptr) {
    std::vector<int64_t> order = epoch_order(epoch);
    int64_t lo = batch_index * batch_size_;
    int64_t hi = std::min(lo + batch_size_, num_entries());
    if (lo >= hi) throw std::out_of_range("batch index out of range");
    std::vector<int64_t> ids(order.begin() + lo, order.begin() + hi);
    return make_batch_for_ids(ids, epoch, view, size_override, policy_override);
  }

  ImageBatch make_batch_for_ids(std::vector<int64_t> ids, int64_t epoch, int view = 0,
                                int64_t size_override = 0,
                                const AugmentPolicy* policy_override = nullptr) {
    int64_t size = size_override > 0 ? size_override : image_size_;
    const AugmentPolicy& pol = policy_override ? *policy_override : policy_;
    // Drop entries whose image fails to decode when configured to skip.
    if (skip_bad_) {
      std::vector<int64_t> kept;
      for (int64_t id : ids) {
        try {
          source(id);
          kept.push_back(id);
        } catch (const IoError& e) {
          std::fprintf(stderr, "warning: skipping %s (%s)\n",
                       manifest_->entries[static_cast<size_t>(id)].image_path.c_str(), e.what());
        }
      }
      ids = std::move(kept);
    }
    int64_t b = static_cast<int64_t>(ids.size());
    ImageBatch out;
    out.ids = ids;
    out.kind = manifest_->kind;
    out.data = TensorF({b, 3, size, size});
    if (out.kind == LabelKind::label_vector) out.label_vectors = TensorF({b, manifest_->num_classes});
    parallel_for(b, [&](int64_t i) {
      int64_t id = ids[static_cast<size_t>(i)];
      const Image& src = source(id);
      Rng rng(mix64(seed_, static_cast<uint64_t>(epoch), static_cast<uint64_t>(id),
                    static_cast<uint64_t>(view)));
      Image aug = apply_augment(src, pol, size, rng);
      float* dst = out.data.data() + i * 3 * size * size;
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < size; ++y)
          for (int64_t x = 0; x < size; ++x)
            dst[(c * size + y) * size + x] =
                (aug.at(y, x, c) - manifest_->mean[static_cast<size_t>(c)]) /
                manifest_->stdev[static_cast<size_t>(c)];
    });
    for (int64_t i = 0; i < b; ++i) {
      const ManifestEntry& e = manifest_->entries[static_cast<size_t>(ids[static_cast<size_t>(i)])];
      if (out.kind == LabelKind::class_index) out.class_labels.push_back(e.class_index);
      if (out.kind == LabelKind::label_vector)
        for (int64_t j = 0; j < manifest_->num_classes; ++j)
          out.label_vectors.at(i, j) = e.labels[static_cast<size_t>(j)];
    }
    if (!out.data.all_finite()) throw std::runtime_error("batch contains non-finite values");
    return out;
  }

  // Labels for every manifest entry in manifest order (validation passes).
  std::vector<int64_t> all_class_labels() const {
    if (manifest_->kind != LabelKind::class_index)
      throw std::runtime_error("manifest does not carry class-index labels");
    std::vector<int64_t> out;
    out.reserve(manifest_->entries.size());
    for (const ManifestEntry& e : manifest_->entries) out.push_back(e.class_index);
    return out;
  }
  TensorD all_label_vectors() const {
    if (manifest_->kind != LabelKind::label_vector)
      throw std::runtime_error("manifest does not carry label vectors");
    int64_t n = num_entries(), c = manifest_->num_classes;
    TensorD out({n, c});
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < c; ++j)
        out.at(i, j) = manifest_->entries[static_cast<size_t>(i)].labels[static_cast<size_t>(j)];
    return out;
  }

  // Normalized range of pixel values per channel (for noise fill).
  std::array<float, 3> norm_lo() const {
    std::array<float, 3> r;
    for (size_t c = 0; c < 3; ++c) r[c] = (0.f - manifest_->mean[c]) / manifest_->stdev[c];
    return r;
  }
  std::array<float, 3> norm_hi() const {
    std::array<float, 3> r;
    for (size_t c = 0; c < 3; ++c) r[c] = (1.f - manifest_->mean[c]) / manifest_->stdev[c];
    return r;
  }

 private:
  const Image& source(int64_t id) {
    auto& slot = cache_[static_cast<size_t>(id)];
    {
      std::lock_guard<std::mutex> lock(cache_mutex_);
      if (slot) return *slot;
    }
    auto img = std::make_shared<Image>(
        read_image(manifest_->entries[static_cast<size_t>(id)].image_path));
    std::lock_guard<std::mutex> lock(cache_mutex_);
    if (!slot) slot = std::move(img);
    return *slot;
  }

  const DatasetManifest* manifest_;
  AugmentPolicy policy_;
  int64_t batch_size_;
  int64_t image_size_;
  uint64_t seed_;
  bool skip_bad_;
  std::vector<std::shared_ptr<Image>> cache_;
  std::mutex cache_mutex_;
};

}  // namespace mcssl
