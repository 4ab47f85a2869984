/* Copyright 2026 The servesim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "servesim/config_file.h"

#include <boost/property_tree/ini_parser.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <sstream>

#include "servesim/common.h"

namespace servesim {

namespace pt = boost::property_tree;

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(e.what());
  }
  return ConfigFile(std::move(tree), path.string());
}

ConfigFile ConfigFile::parse(std::string_view text, std::string source) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(fmt::format("{}: {}", source, e.message()));
  }
  return ConfigFile(std::move(tree), std::move(source));
}

std::vector<std::string> ConfigFile::sections() const {
  std::vector<std::string> names;
  for (const auto& [name, child] : tree_) {
    if (!child.empty()) names.push_back(name);
  }
  return names;
}

std::optional<std::string> ConfigFile::raw(std::string_view key) const {
  auto node = tree_.get_child_optional(pt::ptree::path_type(std::string(key), '.'));
  if (!node || !node->empty()) return std::nullopt;
  return node->data();
}

std::vector<std::string> ConfigFile::keys(std::string_view section) const {
  std::vector<std::string> names;
  auto node = tree_.get_child_optional(pt::ptree::path_type(std::string(section), '.'));
  if (!node) return names;
  for (const auto& [name, child] : *node) {
    if (child.empty()) names.push_back(name);
  }
  return names;
}

bool ConfigFile::has(std::string_view key) const { return raw(key).has_value(); }

double ConfigFile::get_double(std::string_view key) const {
  auto text = raw(key);
  if (!text) throw ConfigError(fmt::format("{}: missing key '{}'", source_, key));
  double value = 0.0;
  const char* end = text->data() + text->size();
  auto [ptr, ec] = std::from_chars(text->data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{}: '{}' is not a number: '{}'", source_, key, *text));
  }
  return value;
}

double ConfigFile::get_double(std::string_view key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::int64_t ConfigFile::get_int(std::string_view key) const {
  auto text = raw(key);
  if (!text) throw ConfigError(fmt::format("{}: missing key '{}'", source_, key));
  std::int64_t value = 0;
  const char* end = text->data() + text->size();
  auto [ptr, ec] = std::from_chars(text->data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(fmt::format("{}: '{}' is not an integer: '{}'", source_, key, *text));
  }
  return value;
}

std::int64_t ConfigFile::get_int(std::string_view key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}

std::string ConfigFile::get_string(std::string_view key) const {
  auto text = raw(key);
  if (!text) throw ConfigError(fmt::format("{}: missing key '{}'", source_, key));
  return *text;
}

std::string ConfigFile::get_string(std::string_view key, std::string fallback) const {
  auto text = raw(key);
  return text ? *text : fallback;
}

bool ConfigFile::get_bool(std::string_view key, bool fallback) const {
  auto text = raw(key);
  if (!text) return fallback;
  if (*text == "true" || *text == "1" || *text == "on") return true;
  if (*text == "false" || *text == "0" || *text == "off") return false;
  throw ConfigError(fmt::format("{}: '{}' is not a boolean: '{}'", source_, key, *text));
}

void ConfigFile::expect_only(std::string_view section,
                             std::initializer_list<std::string_view> allowed) const {
  const pt::ptree* node = &tree_;
  if (!section.empty()) {
    auto child = tree_.get_child_optional(pt::ptree::path_type(std::string(section), '.'));
    if (!child) return;
    node = &*child;
  }
  for (const auto& [name, child] : *node) {
    if (section.empty() && !child.empty()) continue;  // nested section
    if (std::find(allowed.begin(), allowed.end(), name) == allowed.end()) {
      throw ConfigError(fmt::format("{}: unknown key '{}{}{}'", source_, section,
                                    section.empty() ? "" : ".", name));
    }
  }
}

}  // namespace servesim
