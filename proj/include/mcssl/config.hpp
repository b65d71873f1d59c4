#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mcssl/augment.hpp"
#include "mcssl/corruption.hpp"
#include "mcssl/engine.hpp"
#include "mcssl/finetune.hpp"
#include "mcssl/heads.hpp"
#include "mcssl/vit.hpp"

namespace mcssl {

struct ConfigKey {
  const char* key;
  const char* def;
  const char* help;
};

// Every recognized key with its default and help line; the single source of
// truth for parsing, --help, and the fingerprint.
const std::vector<ConfigKey>& config_registry();

// A fully populated key -> value map. Values are kept as strings; typed
// accessors parse on demand and name the key in any error.
class RunConfig {
 public:
  static RunConfig defaults();

  void set(const std::string& key, const std::string& value);  // unknown key -> error
  const std::string& get(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  double get_real(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Sorted "key=value" lines; the fingerprint is FNV-1a 64 over this text.
  std::string canonical() const;
  uint64_t fingerprint() const;

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// TOML-style file: full-line or trailing '#' comments, optional [section]
// headers that prefix the keys below them, key = value pairs with optional
// double quotes around the value. Unknown keys are rejected with the line
// number.
void apply_config_file(RunConfig& cfg, const std::string& path);

// Builders from the flat key space into the module configs.
BackboneConfig backbone_from(const RunConfig& cfg);
HeadConfig heads_from(const RunConfig& cfg);
CorruptionConfig corruption_from(const RunConfig& cfg);
TrainConfig train_from(const RunConfig& cfg);
FinetuneConfig finetune_from(const RunConfig& cfg);
AugmentPolicy augment_from(const RunConfig& cfg);

uint64_t fnv1a64(const std::string& text);

}  // namespace mcssl
