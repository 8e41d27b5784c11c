#pragma once

// Small helpers for JSON-backed configuration structs: strict key checking and
// dotted-key overrides ("encoder.model_dim=32").

#include <fstream>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "siflip/errors.hpp"

namespace siflip {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

/// Reads `key` from `j` into `out` if present.
template <typename V>
void read_field(const Json& j, const char* key, V& out) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

/// Throws ConfigError naming the first key of `j` not in `known`.
inline void reject_unknown_keys(const Json& j, std::string_view section, std::initializer_list<std::string_view> known) {
  if (!j.is_object()) throw ConfigError(std::string(section) + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (auto k : known) ok = ok || (k == it.key());
    if (!ok) throw ConfigError("unknown key '" + it.key() + "' in " + std::string(section) + " config");
  }
}

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse " + path + ": " + e.what());
  }
}

/// Applies "a.b.c=value"; the value is parsed as JSON when possible, else taken
/// as a string.  Intermediate objects are created as needed.
inline void apply_override(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  Json* cur = &j;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!cur->is_object()) throw ConfigError("override path crosses a non-object: " + path);
    cur = &(*cur)[parts[i]];
    if (cur->is_null()) *cur = Json::object();
  }
  (*cur)[parts.back()] = value;
}

}  // namespace siflip
