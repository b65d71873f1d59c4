#pragma once

#include <cstdint>
#include <string>

#include "mcssl/image.hpp"
#include "mcssl/manifest.hpp"
#include "mcssl/rng.hpp"

namespace mcssl {

// Procedural 32x32 shape dataset. The label is the shape class; color,
// texture, position, scale and clutter are label-independent nuisance.
struct SynthConfig {
  int64_t count = 1000;
  int64_t classes = 10;  // <= 10 distinct shapes
  int64_t image_size = 32;
  bool multilabel = false;   // draw 1..3 shapes, emit a presence vector
  double background_noise = 0.08;
  double pixel_noise = 0.04;
  int64_t clutter = 6;       // distractor specks per image
  void validate() const;
};

// Renders one sample. For multiclass `labels` gets a single entry; for
// multilabel it lists the distinct shape classes present.
Image synth_image(const SynthConfig& cfg, uint64_t seed, int64_t index,
                  std::vector<int64_t>& labels);

// Writes <count> PNGs plus manifest.txt (with #classes and measured
// #mean/#std headers) under dir. Returns the manifest path.
std::string generate_synthetic_dataset(const std::string& dir, const SynthConfig& cfg,
                                       uint64_t seed);

}  // namespace mcssl
