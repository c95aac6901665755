#include "rdet/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "rdet/errors.hpp"
#include "rdet/formats.hpp"

namespace rdet::config {

namespace {

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_'))
      return false;
  return true;
}

}  // namespace

const std::string* ConfigMap::find(const std::string& dotted_key) const {
  for (const auto& [k, v] : entries_)
    if (k == dotted_key) return &v;
  return nullptr;
}

void ConfigMap::set(const std::string& dotted_key, const std::string& value) {
  for (auto& [k, v] : entries_)
    if (k == dotted_key) {
      v = value;
      return;
    }
  entries_.emplace_back(dotted_key, value);
}

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap map;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const size_t hash = raw.find('#');
    std::string line = trim(hash == std::string::npos ? raw
                                                      : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = " (line " + std::to_string(line_no) + ")";
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("unterminated section header" + where);
      section = trim(line.substr(1, line.size() - 2));
      if (!valid_name(section))
        throw ConfigError("bad section name '" + section + "'" + where);
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected 'key = value'" + where);
    const std::string key = trim(line.substr(0, eq));
    if (!valid_name(key))
      throw ConfigError("bad key name '" + key + "'" + where);
    if (section.empty())
      throw ConfigError("key '" + key + "' outside any section" + where);
    const std::string dotted = section + '.' + key;
    if (map.find(dotted))
      throw ConfigError("duplicate key '" + dotted + "'" + where);
    map.set(dotted, trim(line.substr(eq + 1)));
  }
  return map;
}

ConfigMap load_config_file(const std::string& path) {
  return parse_config_text(formats::read_file(path));
}

void apply_override(ConfigMap& map, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment +
                      "' must look like section.key=value");
  const std::string key = trim(assignment.substr(0, eq));
  const size_t dot = key.find('.');
  if (dot == std::string::npos || !valid_name(key.substr(0, dot)) ||
      !valid_name(key.substr(dot + 1)))
    throw ConfigError("override key '" + key +
                      "' must be a dotted section.key");
  map.set(key, trim(assignment.substr(eq + 1)));
}

uint64_t fnv1a64(const std::string& bytes, uint64_t seed) {
  uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace rdet::config
