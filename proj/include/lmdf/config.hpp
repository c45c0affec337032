// SPDX-License-Identifier: Apache-2.0
//
// key=value configuration text. '#' starts a comment, blank lines are ignored,
// keys and values are trimmed. Later keys override earlier ones.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace lmdf {

using KeyValues = std::map<std::string, std::string>;

/// Throws DataError naming the line on malformed input.
KeyValues parse_key_values(std::string_view text);
KeyValues load_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

/// Typed lookups with a fallback for absent keys. Throw ValidationError when the
/// value does not parse.
std::uint64_t get_u64(const KeyValues& kv, const std::string& key, std::uint64_t fallback);
double get_double(const KeyValues& kv, const std::string& key, double fallback);
bool get_bool(const KeyValues& kv, const std::string& key, bool fallback);
std::string get_string(const KeyValues& kv, const std::string& key, const std::string& fallback);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace lmdf
