#pragma once

#include "contconv/types.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace contconv {

struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

/// `key = value` lines; blank lines and `#` comments are skipped. Malformed
/// lines and repeated keys raise ParseError naming `source` and the line.
std::vector<KeyValue> parse_key_values(std::string_view text, const std::string& source);

/// Shortest decimal that parses back to the same double.
std::string format_double(double v);

// Strict scalar parsers: the whole string must be consumed. Failures throw
// ParseError(source, line, ...).
double parse_double(const KeyValue& kv, const std::string& source);
std::int64_t parse_int(const KeyValue& kv, const std::string& source);
std::uint64_t parse_u64(const KeyValue& kv, const std::string& source);
bool parse_bool(const KeyValue& kv, const std::string& source);
/// Comma-separated positive integers; an empty value is an empty list.
std::vector<Index> parse_index_list(const KeyValue& kv, const std::string& source);
std::string format_index_list(const std::vector<Index>& v);

std::string read_text_file(const std::string& path);
/// Writes to a sibling temporary file, then renames over `path`.
void write_file_atomic(const std::string& path, std::string_view bytes);

}  // namespace contconv
