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

#pragma once

#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace servesim {

// Key-value configuration in INI syntax (`key = value`, `[section]`,
// `;`/`#` comments). Lookups are typed and report the offending key.
class ConfigFile {
 public:
  static ConfigFile load(const std::filesystem::path& path);
  static ConfigFile parse(std::string_view text, std::string source = "<string>");

  const std::string& source() const { return source_; }

  // Names of the top-level [sections].
  std::vector<std::string> sections() const;
  // Keys directly under `section`, in file order.
  std::vector<std::string> keys(std::string_view section) const;
  bool has(std::string_view key) const;

  double get_double(std::string_view key) const;
  double get_double(std::string_view key, double fallback) const;
  std::int64_t get_int(std::string_view key) const;
  std::int64_t get_int(std::string_view key, std::int64_t fallback) const;
  std::string get_string(std::string_view key) const;
  std::string get_string(std::string_view key, std::string fallback) const;
  bool get_bool(std::string_view key, bool fallback) const;

  // Throws ConfigError naming any key under `section` (or the top level when
  // empty) that is not in `allowed`.
  void expect_only(std::string_view section,
                   std::initializer_list<std::string_view> allowed) const;

 private:
  ConfigFile(boost::property_tree::ptree tree, std::string source)
      : tree_(std::move(tree)), source_(std::move(source)) {}

  std::optional<std::string> raw(std::string_view key) const;

  boost::property_tree::ptree tree_;
  std::string source_;
};

}  // namespace servesim
