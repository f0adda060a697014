#include "contconv/keyvalue.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <system_error>

namespace contconv {

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const KeyValue& kv, const std::string& source, const char* what) {
  T v{};
  const char* first = kv.value.data();
  const char* last = first + kv.value.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || kv.value.empty())
    throw ParseError(source, kv.line, "'" + kv.key + "' expects " + what + ", got '" + kv.value + "'");
  return v;
}

}  // namespace

std::vector<KeyValue> parse_key_values(std::string_view text, const std::string& source) {
  std::vector<KeyValue> out;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto raw = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    auto line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(source, line_no, "expected key = value");
    KeyValue kv{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no};
    if (kv.key.empty()) throw ParseError(source, line_no, "empty key");
    if (!seen.insert(kv.key).second) throw ParseError(source, line_no, "duplicate key '" + kv.key + "'");
    out.push_back(std::move(kv));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double parse_double(const KeyValue& kv, const std::string& source) {
  return parse_number<double>(kv, source, "a real number");
}

std::int64_t parse_int(const KeyValue& kv, const std::string& source) {
  return parse_number<std::int64_t>(kv, source, "an integer");
}

std::uint64_t parse_u64(const KeyValue& kv, const std::string& source) {
  return parse_number<std::uint64_t>(kv, source, "an unsigned integer");
}

bool parse_bool(const KeyValue& kv, const std::string& source) {
  if (kv.value == "true" || kv.value == "1") return true;
  if (kv.value == "false" || kv.value == "0") return false;
  throw ParseError(source, kv.line, "'" + kv.key + "' expects true or false, got '" + kv.value + "'");
}

std::vector<Index> parse_index_list(const KeyValue& kv, const std::string& source) {
  std::vector<Index> out;
  if (kv.value.empty()) return out;
  std::size_t pos = 0;
  while (pos <= kv.value.size()) {
    const auto comma = kv.value.find(',', pos);
    const auto item = trim(std::string_view(kv.value).substr(
        pos, comma == std::string::npos ? std::string::npos : comma - pos));
    KeyValue one{kv.key, std::string(item), kv.line};
    const auto v = parse_int(one, source);
    if (v < 1) throw ParseError(source, kv.line, "'" + kv.key + "' entries must be positive");
    out.push_back(static_cast<Index>(v));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

std::string format_index_list(const std::vector<Index>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path);
  return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move " + tmp + " to " + path);
  }
}

}  // namespace contconv
