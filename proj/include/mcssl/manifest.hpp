#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcssl {

struct ManifestError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LabelKind { none, class_index, label_vector };

struct ManifestEntry {
  std::string image_path;  // resolved against the manifest directory
  LabelKind kind = LabelKind::none;
  int64_t class_index = -1;
  std::vector<uint8_t> labels;  // binary vector for multi-label entries
};

// Line-oriented UTF-8 manifest: `image_path<TAB>label_spec` entries, plus
// optional `#classes=<c>`, `#mean=<r,g,b>`, `#std=<r,g,b>` header lines.
// label_spec is empty (no tab), a class index, or a comma-separated binary
// vector of length c.
struct DatasetManifest {
  std::string root_path;
  int64_t num_classes = 0;
  std::array<float, 3> mean{0.f, 0.f, 0.f};
  std::array<float, 3> stdev{1.f, 1.f, 1.f};
  bool has_normalization = false;
  LabelKind kind = LabelKind::none;
  std::vector<ManifestEntry> entries;
};

// Parses and validates; every referenced image file must exist. Errors carry
// the offending line number.
DatasetManifest load_manifest(const std::string& path);

// Writes a manifest in the same format (used by the dataset generator).
void save_manifest(const std::string& path, const DatasetManifest& m,
                   const std::vector<std::string>& relative_paths);

}  // namespace mcssl
