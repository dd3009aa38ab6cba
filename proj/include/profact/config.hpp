#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

namespace profact {

/// TOML subset: `key = value` lines, `[table]` and `[a.b]` headers, `#`
/// comments, basic and literal strings, integers, floats, booleans and flat
/// arrays of those.
/// Throws ConfigError with the line number on anything else.
nlohmann::json parse_toml(const std::string& text);

/// `.toml` files go through parse_toml, everything else is read as JSON.
/// Throws FileNotFound or ConfigError.
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Throws ConfigError naming the first key of `j` outside `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                         const std::string& where);

} // namespace profact
