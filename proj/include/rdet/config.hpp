#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace rdet::config {

// Parsed key/value file: "[section]" headers group plain "key = value"
// lines, '#' starts a comment anywhere. Entries keep file order and are
// addressed by the dotted form "section.key".
class ConfigMap {
 public:
  const std::string* find(const std::string& dotted_key) const;
  // Replaces an existing entry or appends a new one.
  void set(const std::string& dotted_key, const std::string& value);
  const std::vector<std::pair<std::string, std::string>>& entries() const {
    return entries_;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Throws ConfigError on malformed lines, keys outside any section, or
// duplicate keys.
ConfigMap parse_config_text(const std::string& text);

// IoError when unreadable, otherwise parse_config_text semantics.
ConfigMap load_config_file(const std::string& path);

// "section.key=value" command-line override; throws ConfigError on
// malformed input. Values may be empty.
void apply_override(ConfigMap& map, const std::string& assignment);

// FNV-1a over the bytes; seed with a previous hash to chain.
uint64_t fnv1a64(const std::string& bytes,
                 uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace rdet::config
