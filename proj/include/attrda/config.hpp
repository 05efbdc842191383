// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value configuration with dotted sections ("encoder.d_model=64").
// Blank lines and '#' comments are ignored; later assignments win.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace attrda {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text, std::string_view origin = "<config>");
KeyValues load_key_values(const std::filesystem::path& path);
std::string render_key_values(const KeyValues& kv);

// Entries under "prefix." with the prefix stripped.
KeyValues section(const KeyValues& kv, std::string_view prefix);

double parse_real(std::string_view key, std::string_view value);
std::size_t parse_size(std::string_view key, std::string_view value);
std::uint64_t parse_u64(std::string_view key, std::string_view value);
bool parse_bool(std::string_view key, std::string_view value);

// Shortest text that parses back to the same double.
std::string format_real(double v);

std::vector<std::string> split_list(std::string_view value, char sep = ',');
std::string join_list(const std::vector<std::string>& items, char sep = ',');
std::vector<double> parse_real_list(std::string_view key, std::string_view value);

}  // namespace attrda
