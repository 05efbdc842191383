// SPDX-License-Identifier: Apache-2.0
#include "attrda/config.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "attrda/common.hpp"

namespace attrda {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues parse_key_values(std::string_view text, std::string_view origin) {
  KeyValues kv;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty())
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": empty key");
    kv[std::string(key)] = std::string(trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues load_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

std::string render_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

KeyValues section(const KeyValues& kv, std::string_view prefix) {
  KeyValues out;
  const std::string p = std::string(prefix) + ".";
  for (const auto& [k, v] : kv)
    if (k.size() > p.size() && k.compare(0, p.size(), p) == 0) out[k.substr(p.size())] = v;
  return out;
}

double parse_real(std::string_view key, std::string_view value) {
  const std::string s(trim(value));
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE || !std::isfinite(v))
    throw ConfigError("key '" + std::string(key) + "': expected a real number, got '" + s + "'");
  return v;
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  const auto s = trim(value);
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw ConfigError("key '" + std::string(key) + "': expected a non-negative integer, got '" +
                      std::string(s) + "'");
  return v;
}

std::size_t parse_size(std::string_view key, std::string_view value) {
  return static_cast<std::size_t>(parse_u64(key, value));
}

bool parse_bool(std::string_view key, std::string_view value) {
  const auto s = trim(value);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("key '" + std::string(key) + "': expected true/false, got '" + std::string(s) + "'");
}

std::string format_real(double v) {
  char buf[32];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

std::vector<std::string> split_list(std::string_view value, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= value.size()) {
    auto end = value.find(sep, start);
    if (end == std::string_view::npos) end = value.size();
    const auto item = trim(value.substr(start, end - start));
    if (!item.empty()) out.emplace_back(item);
    start = end + 1;
  }
  return out;
}

std::string join_list(const std::vector<std::string>& items, char sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out.push_back(sep);
    out += items[i];
  }
  return out;
}

std::vector<double> parse_real_list(std::string_view key, std::string_view value) {
  std::vector<double> out;
  for (const auto& item : split_list(value)) out.push_back(parse_real(key, item));
  return out;
}

}  // namespace attrda
