#pragma once

#include <bdry/errors.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace bdry {

/// Ordered `key = value` map. Lines starting with '#' and blank lines are
/// ignored; later keys overwrite earlier ones.
class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::string_view text) {
    KeyValues kv;
    std::size_t line_no = 0;
    std::size_t offset = 0;
    while (offset <= text.size()) {
      const std::size_t end = std::min(text.find('\n', offset), text.size());
      std::string_view line = trim(text.substr(offset, end - offset));
      ++line_no;
      if (!line.empty() && line.front() != '#') {
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
          throw FormatError("line " + std::to_string(line_no) + ": expected key = value", offset);
        }
        const std::string_view key = trim(line.substr(0, eq));
        if (key.empty()) throw FormatError("line " + std::to_string(line_no) + ": empty key", offset);
        kv.set(std::string(key), std::string(trim(line.substr(eq + 1))));
      }
      offset = end + 1;
    }
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  void set(const std::string& key, std::string value) {
    for (auto& [k, v] : entries_) {
      if (k == key) {
        v = std::move(value);
        return;
      }
    }
    entries_.emplace_back(key, std::move(value));
  }

  bool contains(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
      if (k == key) return true;
    }
    return false;
  }

  const std::string* find(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
      if (k == key) return &v;
    }
    return nullptr;
  }

  std::string get(std::string_view key, std::string fallback) const {
    const std::string* v = find(key);
    return v ? *v : fallback;
  }

  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }

  /// Throws FormatError naming the first key not in `allowed`.
  void require_known(const std::vector<std::string_view>& allowed) const {
    for (const auto& [k, v] : entries_) {
      bool ok = false;
      for (std::string_view a : allowed) ok = ok || a == k;
      if (!ok) throw FormatError("unknown key \"" + k + "\"", 0);
    }
  }

  /// Sorted `key = value` text, the canonical form used for echo and hashing.
  std::string to_text() const {
    std::map<std::string, std::string> sorted(entries_.begin(), entries_.end());
    std::string out;
    for (const auto& [k, v] : sorted) out += k + " = " + v + "\n";
    return out;
  }

  static std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

inline double parse_double(std::string_view text, std::string_view what) {
  std::string s(KeyValues::trim(text));
  // a/b fractions appear in epsilon lists ("36/255").
  if (const auto slash = s.find('/'); slash != std::string::npos) {
    return parse_double(s.substr(0, slash), what) / parse_double(s.substr(slash + 1), what);
  }
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError("bad number for " + std::string(what) + ": \"" + s + "\"", 0);
  }
}

inline std::uint64_t parse_u64(std::string_view text, std::string_view what) {
  const std::string_view s = KeyValues::trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("bad integer for " + std::string(what) + ": \"" + std::string(s) + "\"", 0);
  }
  return v;
}

inline std::vector<std::string> split_list(std::string_view text, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(sep, start), text.size());
    const std::string_view item = KeyValues::trim(text.substr(start, end - start));
    if (!item.empty()) out.emplace_back(item);
    start = end + 1;
  }
  return out;
}

inline std::vector<double> parse_double_list(std::string_view text, std::string_view what) {
  std::vector<double> out;
  for (const std::string& item : split_list(text)) out.push_back(parse_double(item, what));
  return out;
}

/// Shortest decimal text that round-trips the double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

/// 64-bit FNV-1a, used to name run directories after their config.
inline std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace bdry
