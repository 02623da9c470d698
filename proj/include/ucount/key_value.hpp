#pragma once

// Flat "section.key=value" text, '#' comments. Shared by checkpoint metadata and experiment configs.

#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ucount/error.hpp"

namespace ucount {

class KeyValues {
 public:
  struct Entry {
    std::string value;
    std::size_t line = 0;
  };

  static KeyValues parse(const std::string& text, const std::string& source) {
    KeyValues kv;
    kv.source_ = source;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = strip(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
      }
      std::string key = strip(line.substr(0, eq));
      if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
      if (kv.entries_.contains(key)) {
        throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "' (first set on line " +
                          std::to_string(kv.entries_[key].line) + ")");
      }
      kv.entries_[key] = Entry{strip(line.substr(eq + 1)), lineno};
    }
    return kv;
  }

  bool has(const std::string& key) const { return entries_.contains(key); }
  const std::map<std::string, Entry>& entries() const { return entries_; }
  const std::string& source() const { return source_; }

  void set(const std::string& key, const std::string& value) { entries_[key] = Entry{value, 0}; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second.value;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return to_double(it->second, key);
  }

  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return to_uint(it->second, key);
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const std::string& v = it->second.value;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw error(it->second, key, "expected a boolean");
  }

  std::vector<std::uint64_t> get_uint_list(const std::string& key, std::vector<std::uint64_t> fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<std::uint64_t> out;
    std::stringstream ss(it->second.value);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_uint(Entry{strip(item), it->second.line}, key));
    if (out.empty()) throw error(it->second, key, "expected a comma-separated list");
    return out;
  }

  std::vector<std::string> get_string_list(const std::string& key, std::vector<std::string> fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<std::string> out;
    std::stringstream ss(it->second.value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = strip(item);
      if (!item.empty()) out.push_back(item);
    }
    if (out.empty()) throw error(it->second, key, "expected a comma-separated list");
    return out;
  }

  /// Rejects keys that no reader consumed, so typos do not pass silently.
  void require_known(const std::vector<std::string>& known_prefixes_or_keys) const {
    for (const auto& [key, entry] : entries_) {
      bool ok = false;
      for (const auto& k : known_prefixes_or_keys) ok = ok || key == k;
      if (!ok) throw error(entry, key, "unknown key");
    }
  }

  static std::string strip(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

 private:
  ConfigError error(const Entry& e, const std::string& key, const std::string& what) const {
    return ConfigError(source_ + ":" + std::to_string(e.line) + ": " + key + ": " + what + " (got '" + e.value + "')");
  }

  double to_double(const Entry& e, const std::string& key) const {
    char* end = nullptr;
    const double v = std::strtod(e.value.c_str(), &end);
    if (e.value.empty() || *end != '\0') throw error(e, key, "expected a number");
    return v;
  }

  std::uint64_t to_uint(const Entry& e, const std::string& key) const {
    char* end = nullptr;
    if (e.value.empty() || e.value[0] == '-') throw error(e, key, "expected a non-negative integer");
    const auto v = std::strtoull(e.value.c_str(), &end, 10);
    if (*end != '\0') throw error(e, key, "expected a non-negative integer");
    return v;
  }

  std::string source_;
  std::map<std::string, Entry> entries_;
};

}  // namespace ucount
