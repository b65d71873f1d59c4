#include "mcssl/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace mcssl {
namespace {

namespace fs = std::filesystem;

[[noreturn]] void fail(const std::string& path, int line, const std::string& what) {
  throw ManifestError(path + ":" + std::to_string(line) + ": " + what);
}

std::array<float, 3> parse_triple(const std::string& path, int line, const std::string& v) {
  std::array<float, 3> out{};
  std::stringstream ss(v);
  std::string part;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(ss, part, ',')) fail(path, line, "expected three comma-separated values");
    try {
      out[static_cast<size_t>(i)] = std::stof(part);
    } catch (const std::exception&) {
      fail(path, line, "malformed number '" + part + "'");
    }
  }
  if (std::getline(ss, part, ',')) fail(path, line, "expected exactly three values");
  return out;
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError(path + ": cannot open manifest");
  DatasetManifest m;
  m.root_path = fs::path(path).parent_path().string();
  if (m.root_path.empty()) m.root_path = ".";

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("#classes=", 0) == 0) {
        try {
          m.num_classes = std::stoll(line.substr(9));
        } catch (const std::exception&) {
          fail(path, lineno, "malformed #classes header");
        }
        if (m.num_classes < 1) fail(path, lineno, "#classes must be >= 1");
      } else if (line.rfind("#mean=", 0) == 0) {
        m.mean = parse_triple(path, lineno, line.substr(6));
        m.has_normalization = true;
      } else if (line.rfind("#std=", 0) == 0) {
        m.stdev = parse_triple(path, lineno, line.substr(5));
        for (float s : m.stdev)
          if (s <= 0) fail(path, lineno, "#std entries must be positive");
        m.has_normalization = true;
      }
      continue;  // other # lines are comments
    }

    ManifestEntry e;
    size_t tab = line.find('\t');
    std::string label_spec;
    if (tab == std::string::npos) {
      e.image_path = line;
    } else {
      e.image_path = line.substr(0, tab);
      label_spec = line.substr(tab + 1);
    }
    if (e.image_path.empty()) fail(path, lineno, "empty image path");

    if (label_spec.empty()) {
      e.kind = LabelKind::none;
    } else if (label_spec.find(',') != std::string::npos) {
      e.kind = LabelKind::label_vector;
      std::stringstream ss(label_spec);
      std::string part;
      while (std::getline(ss, part, ',')) {
        if (part == "0")
          e.labels.push_back(0);
        else if (part == "1")
          e.labels.push_back(1);
        else
          fail(path, lineno, "label vector entries must be 0 or 1, got '" + part + "'");
      }
      if (m.num_classes == 0) fail(path, lineno, "label vector requires a #classes header");
      if (static_cast<int64_t>(e.labels.size()) != m.num_classes)
        fail(path, lineno,
             "label length mismatch: got " + std::to_string(e.labels.size()) + ", expected " +
                 std::to_string(m.num_classes));
    } else {
      e.kind = LabelKind::class_index;
      try {
        size_t used = 0;
        e.class_index = std::stoll(label_spec, &used);
        if (used != label_spec.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        fail(path, lineno, "malformed label '" + label_spec + "'");
      }
      if (e.class_index < 0) fail(path, lineno, "class index must be >= 0");
      if (m.num_classes == 0) fail(path, lineno, "class index requires a #classes header");
      if (e.class_index >= m.num_classes)
        fail(path, lineno,
             "class index " + std::to_string(e.class_index) + " out of range for " +
                 std::to_string(m.num_classes) + " classes");
    }

    if (!m.entries.empty() && e.kind != m.kind)
      fail(path, lineno, "mixed label kinds within one manifest");
    m.kind = e.kind;

    fs::path full = fs::path(m.root_path) / e.image_path;
    if (!fs::exists(full)) fail(path, lineno, "image file not found: " + full.string());
    e.image_path = full.string();
    m.entries.push_back(std::move(e));
  }
  return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m,
                   const std::vector<std::string>& relative_paths) {
  if (relative_paths.size() != m.entries.size())
    throw ManifestError("save_manifest: path count mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ManifestError(path + ": cannot open for writing");
  if (m.num_classes > 0) out << "#classes=" << m.num_classes << "\n";
  if (m.has_normalization) {
    out << "#mean=" << m.mean[0] << "," << m.mean[1] << "," << m.mean[2] << "\n";
    out << "#std=" << m.stdev[0] << "," << m.stdev[1] << "," << m.stdev[2] << "\n";
  }
  for (size_t i = 0; i < m.entries.size(); ++i) {
    const ManifestEntry& e = m.entries[i];
    out << relative_paths[i];
    if (e.kind == LabelKind::class_index) {
      out << '\t' << e.class_index;
    } else if (e.kind == LabelKind::label_vector) {
      out << '\t';
      for (size_t j = 0; j < e.labels.size(); ++j) {
        if (j) out << ',';
        out << static_cast<int>(e.labels[j]);
      }
    }
    out << '\n';
  }
}

}  // namespace mcssl
