// odpers/config_file.hpp


// Copyright 2026  The odpers Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.


#ifndef ODPERS_CONFIG_FILE_HPP_
#define ODPERS_CONFIG_FILE_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace odpers {

struct ConfigEntry {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

struct ConfigSection {
  std::string name;  // "" for entries before the first header
  std::vector<ConfigEntry> entries;
  std::size_t line = 0;
};

/// Plain-text key-value format:
///
///   # comment
///   [section name]
///   key = value
///   key = "  value with kept spaces"
///
/// Keys and unquoted values are trimmed. Throws ConfigError naming the line
/// on malformed input.
std::vector<ConfigSection> parse_config_text(std::string_view text);

/// Quotes a value when trimming would change it.
std::string quote_config_value(std::string_view value);

std::string format_double(double v);
std::uint64_t parse_u64(std::string_view key, std::string_view value);
double parse_double(std::string_view key, std::string_view value);
bool parse_bool(std::string_view key, std::string_view value);

/// Whole-file read. Throws DataError when the file cannot be opened.
std::string read_text_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and rename.
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace odpers

#endif  // ODPERS_CONFIG_FILE_HPP_
