#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mcssl/rng.hpp"
#include "mcssl/tensor.hpp"

namespace mcssl {

struct CorruptionConfig {
  double target_fraction = 0.6;  // fraction of tokens to corrupt, "up to"
  double drop_share = 0.7;       // portion of blocks filled with noise vs donor patches
  int64_t block_min = 1, block_max = 4;  // rectangle side range, token units
  int64_t patch = 4;                     // token grid alignment, pixels

  void validate() const {
    if (target_fraction < 0 || target_fraction > 1)
      throw std::invalid_argument("target_fraction must be in [0, 1]");
    if (drop_share < 0 || drop_share > 1)
      throw std::invalid_argument("drop_share must be in [0, 1]");
    if (block_min < 1 || block_max < block_min)
      throw std::invalid_argument("block size range must satisfy 1 <= min <= max");
    if (patch < 1) throw std::invalid_argument("patch must be >= 1");
  }
};

struct MaskBlock {
  int64_t x, y, w, h;
};

struct CorruptionOutcome {
  TensorF corrupted;                // B x C x H x W
  std::vector<uint8_t> token_mask;  // B * n, 1 = corrupted token
  std::vector<uint8_t> pixel_mask;  // B * H * W
  int64_t grid_h = 0, grid_w = 0;
};

namespace detail {

// Occupancy values: 0 free, 1 occupied, 2 edge-adjacent halo. Keeping a halo
// of one cell on the four sides of every placed rectangle guarantees that
// connected components of the final mask are exactly the placed rectangles.
class BlockCanvas {
 public:
  BlockCanvas(int64_t gh, int64_t gw) : gh_(gh), gw_(gw), grid_(static_cast<size_t>(gh * gw), 0) {}

  bool can_place(int64_t x, int64_t y, int64_t w, int64_t h) const {
    if (x < 0 || y < 0 || x + w > gw_ || y + h > gh_) return false;
    for (int64_t yy = y; yy < y + h; ++yy)
      for (int64_t xx = x; xx < x + w; ++xx)
        if (grid_[static_cast<size_t>(yy * gw_ + xx)]) return false;
    return true;
  }

  void place(int64_t x, int64_t y, int64_t w, int64_t h) {
    for (int64_t yy = y; yy < y + h; ++yy)
      for (int64_t xx = x; xx < x + w; ++xx) grid_[static_cast<size_t>(yy * gw_ + xx)] = 1;
    mark_halo(x, y - 1, w, 1);
    mark_halo(x, y + h, w, 1);
    mark_halo(x - 1, y, 1, h);
    mark_halo(x + w, y, 1, h);
  }

 private:
  void mark_halo(int64_t x, int64_t y, int64_t w, int64_t h) {
    for (int64_t yy = y; yy < y + h; ++yy) {
      if (yy < 0 || yy >= gh_) continue;
      for (int64_t xx = x; xx < x + w; ++xx) {
        if (xx < 0 || xx >= gw_) continue;
        uint8_t& cell = grid_[static_cast<size_t>(yy * gw_ + xx)];
        if (cell == 0) cell = 2;
      }
    }
  }

  int64_t gh_, gw_;
  std::vector<uint8_t> grid_;
};

}  // namespace detail

// Packs non-adjacent rectangles until the covered fraction reaches the budget
// or the grid jams. Sizes are taken in decreasing area (equal areas in a
// seed-shuffled order) with random placement first and an exhaustive position
// scan as fallback; the largest-first order keeps halo waste low enough that
// coverage reliably lands in [0.8*t, t] for t up to ~0.7 and degrades
// gracefully toward the geometric packing limit above that. target >= 0.999
// short-circuits to the full grid (one saturated block).
inline std::vector<MaskBlock> sample_mask_blocks(int64_t gh, int64_t gw,
                                                 const CorruptionConfig& cfg, double target,
                                                 uint64_t seed) {
  cfg.validate();
  if (gh < 1 || gw < 1) throw std::invalid_argument("mask grid must be non-empty");
  if (target >= 0.999) return {MaskBlock{0, 0, gw, gh}};
  int64_t n = gh * gw;
  int64_t budget = static_cast<int64_t>(target * static_cast<double>(n) + 1e-9);
  std::vector<MaskBlock> blocks;
  if (budget < 1) return blocks;

  // Degenerate grids clamp block sides so something always fits.
  int64_t bmax_w = std::min(cfg.block_max, gw);
  int64_t bmax_h = std::min(cfg.block_max, gh);
  int64_t bmin_w = std::min(cfg.block_min, bmax_w);
  int64_t bmin_h = std::min(cfg.block_min, bmax_h);

  detail::BlockCanvas canvas(gh, gw);
  Rng rng(seed);
  std::vector<std::pair<int64_t, int64_t>> sizes;
  for (int64_t bw = bmin_w; bw <= bmax_w; ++bw)
    for (int64_t bh = bmin_h; bh <= bmax_h; ++bh) sizes.push_back({bw, bh});
  rng.shuffle(sizes);
  std::stable_sort(sizes.begin(), sizes.end(),
                   [](auto a, auto b) { return a.first * a.second > b.first * b.second; });

  int64_t covered = 0;
  for (auto [bw, bh] : sizes) {
    int64_t area = bw * bh;
    while (budget - covered >= area) {
      bool placed = false;
      for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
        int64_t x = rng.uniform_int(gw - bw + 1);
        int64_t y = rng.uniform_int(gh - bh + 1);
        if (canvas.can_place(x, y, bw, bh)) {
          canvas.place(x, y, bw, bh);
          blocks.push_back({x, y, bw, bh});
          covered += area;
          placed = true;
        }
      }
      if (!placed) {
        int64_t nx = gw - bw + 1, ny = gh - bh + 1, total = nx * ny;
        int64_t start = rng.uniform_int(total);
        for (int64_t i = 0; i < total && !placed; ++i) {
          int64_t pos = (start + i) % total;
          int64_t x = pos % nx, y = pos / nx;
          if (canvas.can_place(x, y, bw, bh)) {
            canvas.place(x, y, bw, bh);
            blocks.push_back({x, y, bw, bh});
            covered += area;
            placed = true;
          }
        }
      }
      if (!placed) break;  // this size no longer fits anywhere
    }
  }
  return blocks;
}

inline std::vector<uint8_t> blocks_to_mask(const std::vector<MaskBlock>& blocks, int64_t gh,
                                           int64_t gw) {
  std::vector<uint8_t> mask(static_cast<size_t>(gh * gw), 0);
  for (const MaskBlock& b : blocks)
    for (int64_t y = b.y; y < b.y + b.h; ++y)
      for (int64_t x = b.x; x < b.x + b.w; ++x) mask[static_cast<size_t>(y * gw + x)] = 1;
  return mask;
}

// Token mask at cfg.target_fraction; deterministic in seed.
inline std::vector<uint8_t> sample_mask(int64_t gh, int64_t gw, const CorruptionConfig& cfg,
                                        uint64_t seed) {
  return blocks_to_mask(sample_mask_blocks(gh, gw, cfg, cfg.target_fraction, seed), gh, gw);
}

// GMML corruption of a normalized batch. Per image the realized fraction is
// drawn uniformly in [0, target_fraction]; each block is filled with uniform
// noise over the normalized pixel range (probability drop_share) or with the
// same-location pixels of another image in the batch.
inline CorruptionOutcome corrupt(const TensorF& batch, const CorruptionConfig& cfg, uint64_t seed,
                                 const std::array<float, 3>& noise_lo,
                                 const std::array<float, 3>& noise_hi) {
  cfg.validate();
  if (batch.ndim() != 4) throw std::invalid_argument("corrupt expects B x C x H x W");
  int64_t B = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  if (H % cfg.patch || W % cfg.patch)
    throw std::invalid_argument("image dims must be multiples of the patch size");
  if (cfg.drop_share < 1.0 && B < 2)
    throw std::invalid_argument("replacement requires >=2 images in the batch");
  int64_t gh = H / cfg.patch, gw = W / cfg.patch, n = gh * gw, p = cfg.patch;

  CorruptionOutcome out;
  out.corrupted = batch;
  out.token_mask.assign(static_cast<size_t>(B * n), 0);
  out.pixel_mask.assign(static_cast<size_t>(B * H * W), 0);
  out.grid_h = gh;
  out.grid_w = gw;

  for (int64_t i = 0; i < B; ++i) {
    Rng rng(mix64(seed, static_cast<uint64_t>(i), 0xC0u));
    double target = rng.uniform(0.0, cfg.target_fraction);
    std::vector<MaskBlock> blocks =
        sample_mask_blocks(gh, gw, cfg, target, mix64(seed, static_cast<uint64_t>(i), 0xB1u));
    for (const MaskBlock& blk : blocks) {
      bool drop = rng.bernoulli(cfg.drop_share);
      int64_t donor = -1;
      if (!drop) {
        donor = rng.uniform_int(B - 1);
        if (donor >= i) ++donor;
      }
      for (int64_t ty = blk.y; ty < blk.y + blk.h; ++ty)
        for (int64_t tx = blk.x; tx < blk.x + blk.w; ++tx) {
          out.token_mask[static_cast<size_t>(i * n + ty * gw + tx)] = 1;
          for (int64_t dy = 0; dy < p; ++dy)
            for (int64_t dx = 0; dx < p; ++dx) {
              int64_t y = ty * p + dy, x = tx * p + dx;
              out.pixel_mask[static_cast<size_t>((i * H + y) * W + x)] = 1;
              for (int64_t c = 0; c < C; ++c) {
                int64_t idx = ((i * C + c) * H + y) * W + x;
                if (drop)
                  out.corrupted[idx] = static_cast<float>(
                      rng.uniform(noise_lo[static_cast<size_t>(c)], noise_hi[static_cast<size_t>(c)]));
                else
                  out.corrupted[idx] = batch[((donor * C + c) * H + y) * W + x];
              }
            }
        }
    }
  }
  return out;
}

// Exact pixel-level upsampling of a token mask (for the mask consistency
// invariant and debug dumps).
inline std::vector<uint8_t> upsample_token_mask(const std::vector<uint8_t>& token_mask, int64_t gh,
                                                int64_t gw, int64_t patch) {
  std::vector<uint8_t> px(static_cast<size_t>(gh * patch * gw * patch), 0);
  for (int64_t ty = 0; ty < gh; ++ty)
    for (int64_t tx = 0; tx < gw; ++tx) {
      if (!token_mask[static_cast<size_t>(ty * gw + tx)]) continue;
      for (int64_t dy = 0; dy < patch; ++dy)
        for (int64_t dx = 0; dx < patch; ++dx)
          px[static_cast<size_t>((ty * patch + dy) * gw * patch + tx * patch + dx)] = 1;
    }
  return px;
}

}  // namespace mcssl
