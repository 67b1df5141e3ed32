#pragma once

#include <filesystem>
#include <map>
#include <string>

namespace segadapt {

/// Flat key=value settings. Keys match CLI flag names without dashes.
using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines; `#` starts a comment. Throws BadConfig on a
/// line without '=' or an empty key.
KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);

KeyValues read_key_values(const std::filesystem::path& path);
void write_key_values(const KeyValues& kv, const std::filesystem::path& path);

}  // namespace segadapt
