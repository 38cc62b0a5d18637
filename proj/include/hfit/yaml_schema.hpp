#pragma once

// Strict YAML schema walking shared by the model and run config parsers.
// Unknown keys and wrongly typed values raise ConfigError naming the full
// dotted key path.

#include <yaml-cpp/yaml.h>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hfit/errors.hpp"

namespace hfit::yaml_schema {

void require_map(const YAML::Node& node, const std::string& path);
void reject_unknown(const YAML::Node& node, const std::string& path,
                    const std::vector<std::string>& known);

// Leaves `out` untouched when the key is absent.
template <typename T>
void read(const YAML::Node& node, const char* key, T& out, const std::string& path) {
  const auto child = node[key];
  if (!child) return;
  try {
    out = child.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("'" + path + "." + key + "' has the wrong type");
  }
}

void read_triple(const YAML::Node& node, const char* key, std::array<int64_t, 3>& out,
                 const std::string& path);

}  // namespace hfit::yaml_schema
