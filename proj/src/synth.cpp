#include "mcssl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "mcssl/io_image.hpp"

namespace mcssl {

void SynthConfig::validate() const {
  if (count < 1) throw std::invalid_argument("synth: count must be positive");
  if (classes < 2 || classes > 10) throw std::invalid_argument("synth: classes must be in [2, 10]");
  if (image_size < 16) throw std::invalid_argument("synth: image size must be at least 16");
}

namespace {

struct Shape {
  int64_t cls;
  double cx, cy;     // center, pixels
  double radius;     // half extent, pixels
  float r, g, b;     // fill color
  double angle;      // small rotation for bar / stripe classes
};

bool inside_shape(const Shape& s, double x, double y) {
  double dx = x - s.cx, dy = y - s.cy, rad = s.radius;
  double ca = std::cos(s.angle), sa = std::sin(s.angle);
  double rx = ca * dx + sa * dy, ry = -sa * dx + ca * dy;
  switch (s.cls) {
    case 0:  // filled disk
      return dx * dx + dy * dy <= rad * rad;
    case 1: {  // square frame
      double m = std::max(std::abs(rx), std::abs(ry));
      return m <= rad && m >= rad * 0.55;
    }
    case 2:  // upward triangle
      return ry <= rad * 0.8 && ry >= -rad * 0.8 &&
             std::abs(rx) <= (ry + rad * 0.8) * 0.625;
    case 3: {  // ring
      double d2 = dx * dx + dy * dy;
      return d2 <= rad * rad && d2 >= rad * rad * 0.35;
    }
    case 4:  // plus
      return (std::abs(rx) <= rad * 0.3 && std::abs(ry) <= rad) ||
             (std::abs(ry) <= rad * 0.3 && std::abs(rx) <= rad);
    case 5:  // horizontal bar
      return std::abs(ry) <= rad * 0.35 && std::abs(rx) <= rad;
    case 6:  // vertical bar
      return std::abs(rx) <= rad * 0.35 && std::abs(ry) <= rad;
    case 7:  // diamond
      return std::abs(rx) + std::abs(ry) <= rad;
    case 8: {  // coarse checker inside a square
      if (std::max(std::abs(rx), std::abs(ry)) > rad) return false;
      int qx = rx < 0 ? 0 : 1;
      int qy = ry < 0 ? 0 : 1;
      return (qx + qy) % 2 == 0;
    }
    case 9:  // diagonal stripes inside a disk
      if (dx * dx + dy * dy > rad * rad) return false;
      return static_cast<int64_t>(std::floor((rx + ry) / (rad * 0.45))) % 2 == 0;
    default:
      return false;
  }
}

void render_shape(Image& img, const Shape& s) {
  // 2x2 supersampling for soft edges
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      int hit = 0;
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx)
          hit += inside_shape(s, x + 0.25 + 0.5 * sx, y + 0.25 + 0.5 * sy) ? 1 : 0;
      if (!hit) continue;
      float a = static_cast<float>(hit) / 4.f;
      img.at(y, x, 0) = (1 - a) * img.at(y, x, 0) + a * s.r;
      img.at(y, x, 1) = (1 - a) * img.at(y, x, 1) + a * s.g;
      img.at(y, x, 2) = (1 - a) * img.at(y, x, 2) + a * s.b;
    }
}

Shape sample_shape(const SynthConfig& cfg, int64_t cls, Rng& rng, double scale_lo,
                   double scale_hi) {
  Shape s;
  s.cls = cls;
  double size = static_cast<double>(cfg.image_size);
  s.radius = size * rng.uniform(scale_lo, scale_hi) / 2.0;
  s.cx = rng.uniform(s.radius * 0.9, size - s.radius * 0.9);
  s.cy = rng.uniform(s.radius * 0.9, size - s.radius * 0.9);
  // saturated foreground, kept away from dim backgrounds
  float base[3];
  for (float& c : base) c = static_cast<float>(rng.uniform(0.0, 1.0));
  int hi = rng.uniform_int(3);
  base[hi] = static_cast<float>(rng.uniform(0.75, 1.0));
  s.r = base[0];
  s.g = base[1];
  s.b = base[2];
  s.angle = rng.uniform(-0.18, 0.18);  // small tilt, never class-crossing
  return s;
}

}  // namespace

Image synth_image(const SynthConfig& cfg, uint64_t seed, int64_t index,
                  std::vector<int64_t>& labels) {
  cfg.validate();
  Rng rng(mix64(seed, 0x5C3AULL, static_cast<uint64_t>(index)));
  int64_t n = cfg.image_size;
  Image img(n, n, 3);

  // low-frequency background gradient plus noise
  float b0[3], b1[3];
  for (int c = 0; c < 3; ++c) {
    b0[c] = static_cast<float>(rng.uniform(0.05, 0.45));
    b1[c] = static_cast<float>(rng.uniform(0.05, 0.45));
  }
  double gx = rng.uniform(-1.0, 1.0), gy = rng.uniform(-1.0, 1.0);
  double gn = std::max(1e-6, std::hypot(gx, gy));
  gx /= gn;
  gy /= gn;
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x) {
      double t = ((gx * x + gy * y) / n + 1.0) / 2.0;
      for (int64_t c = 0; c < 3; ++c) {
        double v = (1 - t) * b0[c] + t * b1[c] + rng.normal() * cfg.background_noise;
        img.at(y, x, c) = static_cast<float>(v);
      }
    }

  // clutter specks
  for (int64_t k = 0; k < cfg.clutter; ++k) {
    int64_t cy = rng.uniform_int(n), cx = rng.uniform_int(n);
    int64_t rr = 1 + rng.uniform_int(2);
    float cr = static_cast<float>(rng.uniform(0.0, 1.0));
    float cg = static_cast<float>(rng.uniform(0.0, 1.0));
    float cb = static_cast<float>(rng.uniform(0.0, 1.0));
    for (int64_t y = std::max<int64_t>(0, cy - rr); y < std::min(n, cy + rr + 1); ++y)
      for (int64_t x = std::max<int64_t>(0, cx - rr); x < std::min(n, cx + rr + 1); ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= rr * rr) {
          img.at(y, x, 0) = 0.5f * img.at(y, x, 0) + 0.5f * cr;
          img.at(y, x, 1) = 0.5f * img.at(y, x, 1) + 0.5f * cg;
          img.at(y, x, 2) = 0.5f * img.at(y, x, 2) + 0.5f * cb;
        }
  }

  labels.clear();
  if (cfg.multilabel) {
    int64_t k = 1 + rng.uniform_int(3);
    std::vector<int64_t> pool(static_cast<size_t>(cfg.classes));
    for (int64_t i = 0; i < cfg.classes; ++i) pool[static_cast<size_t>(i)] = i;
    for (int64_t i = cfg.classes - 1; i > 0; --i)
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(rng.uniform_int(i + 1))]);
    pool.resize(static_cast<size_t>(k));
    std::sort(pool.begin(), pool.end());
    for (int64_t cls : pool) {
      render_shape(img, sample_shape(cfg, cls, rng, 0.28, 0.45));
      labels.push_back(cls);
    }
  } else {
    int64_t cls = index % cfg.classes;  // balanced classes
    render_shape(img, sample_shape(cfg, cls, rng, 0.40, 0.70));
    labels.push_back(cls);
  }

  // pixel noise and clamp
  for (int64_t i = 0; i < n * n * 3; ++i)
    img.px[static_cast<size_t>(i)] =
        static_cast<float>(img.px[static_cast<size_t>(i)] + rng.normal() * cfg.pixel_noise);
  clamp01_inplace(img);
  return img;
}

std::string generate_synthetic_dataset(const std::string& dir, const SynthConfig& cfg,
                                       uint64_t seed) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  m.root_path = dir;
  m.num_classes = cfg.classes;
  m.kind = cfg.multilabel ? LabelKind::label_vector : LabelKind::class_index;

  double sum[3] = {0, 0, 0}, sumsq[3] = {0, 0, 0};
  int64_t count_px = 0;
  std::vector<int64_t> labels;
  std::vector<std::string> rel;
  for (int64_t i = 0; i < cfg.count; ++i) {
    Image img = synth_image(cfg, seed, i, labels);
    char name[32];
    std::snprintf(name, sizeof name, "img_%06lld.png", static_cast<long long>(i));
    write_png(dir + "/" + name, img);
    rel.emplace_back(name);
    for (int64_t p = 0; p < img.h * img.w; ++p)
      for (int64_t c = 0; c < 3; ++c) {
        double v = img.px[static_cast<size_t>(p * 3 + c)];
        sum[c] += v;
        sumsq[c] += v * v;
      }
    count_px += img.h * img.w;

    ManifestEntry e;
    e.image_path = dir + "/" + name;
    if (cfg.multilabel) {
      e.kind = LabelKind::label_vector;
      e.labels.assign(static_cast<size_t>(cfg.classes), 0);
      for (int64_t cls : labels) e.labels[static_cast<size_t>(cls)] = 1;
    } else {
      e.kind = LabelKind::class_index;
      e.class_index = labels[0];
    }
    m.entries.push_back(std::move(e));
  }
  m.has_normalization = true;
  for (int c = 0; c < 3; ++c) {
    double mean = sum[c] / static_cast<double>(count_px);
    double var = sumsq[c] / static_cast<double>(count_px) - mean * mean;
    m.mean[static_cast<size_t>(c)] = static_cast<float>(mean);
    m.stdev[static_cast<size_t>(c)] = static_cast<float>(std::max(std::sqrt(var), 1e-3));
  }
  std::string manifest_path = dir + "/manifest.txt";
  save_manifest(manifest_path, m, rel);
  return manifest_path;
}

}  // namespace mcssl
