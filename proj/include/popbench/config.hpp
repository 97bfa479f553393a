#pragma once

#include <cerrno>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "popbench/csv.hpp"

namespace popbench {

// Flat TOML-subset configuration: [section] headers, `key = value` pairs,
// strings/numbers/booleans/one-line arrays, `#` comments. Keys are exposed
// dotted ("section.key").
class Config {
 public:
  struct Value {
    enum class Kind { kString, kNumber, kBool, kArray };
    Kind kind = Kind::kString;
    std::string str;
    std::string raw;  // original token; lets 64-bit seeds round-trip exactly
    double num = 0.0;
    bool boolean = false;
    std::vector<Value> items;
  };

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key) const {
    const Value& v = require(key);
    if (v.kind != Value::Kind::kString) throw std::runtime_error("config key '" + key + "' is not a string");
    return v.str;
  }
  double get_double(const std::string& key) const {
    const Value& v = require(key);
    if (v.kind != Value::Kind::kNumber) throw std::runtime_error("config key '" + key + "' is not a number");
    return v.num;
  }
  long long get_int(const std::string& key) const {
    double d = get_double(key);
    long long i = static_cast<long long>(d);
    if (static_cast<double>(i) != d) throw std::runtime_error("config key '" + key + "' is not an integer");
    return i;
  }
  bool get_bool(const std::string& key) const {
    const Value& v = require(key);
    if (v.kind != Value::Kind::kBool) throw std::runtime_error("config key '" + key + "' is not a boolean");
    return v.boolean;
  }
  std::vector<std::string> get_string_array(const std::string& key) const {
    const Value& v = require(key);
    if (v.kind != Value::Kind::kArray) throw std::runtime_error("config key '" + key + "' is not an array");
    std::vector<std::string> out;
    for (const auto& item : v.items) {
      if (item.kind != Value::Kind::kString) {
        throw std::runtime_error("config key '" + key + "' has a non-string element");
      }
      out.push_back(item.str);
    }
    return out;
  }
  std::vector<double> get_double_array(const std::string& key) const {
    const Value& v = require(key);
    if (v.kind != Value::Kind::kArray) throw std::runtime_error("config key '" + key + "' is not an array");
    std::vector<double> out;
    for (const auto& item : v.items) {
      if (item.kind != Value::Kind::kNumber) {
        throw std::runtime_error("config key '" + key + "' has a non-numeric element");
      }
      out.push_back(item.num);
    }
    return out;
  }

  std::string get_string_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get_string(key) : fallback;
  }
  double get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }
  long long get_int_or(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
  }
  bool get_bool_or(const std::string& key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
  }

  // Exact unsigned 64-bit read (doubles cannot carry every seed).
  std::uint64_t get_u64(const std::string& key) const {
    const Value& v = require(key);
    if (v.kind != Value::Kind::kNumber) throw std::runtime_error("config key '" + key + "' is not a number");
    errno = 0;
    char* end = nullptr;
    unsigned long long parsed = std::strtoull(v.raw.c_str(), &end, 10);
    if (errno != 0 || end == v.raw.c_str() || *end != '\0') {
      throw std::runtime_error("config key '" + key + "' is not an unsigned 64-bit integer");
    }
    return static_cast<std::uint64_t>(parsed);
  }

  void set(const std::string& key, Value value) { values_[key] = std::move(value); }

  const std::map<std::string, Value>& entries() const { return values_; }

 private:
  const Value& require(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::runtime_error("config key '" + key + "' is missing");
    return it->second;
  }

  std::map<std::string, Value> values_;
};

namespace detail {

inline std::string config_trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Removes a trailing `# comment` that is not inside a quoted string.
inline std::string strip_inline_comment(const std::string& s) {
  bool in_quote = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_quote = !in_quote;
    if (s[i] == '#' && !in_quote) return s.substr(0, i);
  }
  return s;
}

inline Config::Value parse_config_scalar(const std::string& token, const std::string& where) {
  Config::Value v;
  v.raw = token;
  if (token.size() >= 2 && token.front() == '"' && token.back() == '"') {
    v.kind = Config::Value::Kind::kString;
    std::string body = token.substr(1, token.size() - 2);
    std::string out;
    for (std::size_t i = 0; i < body.size(); ++i) {
      if (body[i] == '\\' && i + 1 < body.size()) {
        char next = body[i + 1];
        if (next == '"' || next == '\\') {
          out += next;
          ++i;
          continue;
        }
      }
      out += body[i];
    }
    v.str = out;
    return v;
  }
  if (token == "true" || token == "false") {
    v.kind = Config::Value::Kind::kBool;
    v.boolean = token == "true";
    return v;
  }
  v.kind = Config::Value::Kind::kNumber;
  v.num = parse_double(token, where);
  return v;
}

inline std::vector<std::string> split_array_items(const std::string& body, const std::string& where) {
  std::vector<std::string> items;
  std::string current;
  bool in_quote = false;
  for (std::size_t i = 0; i < body.size(); ++i) {
    char c = body[i];
    if (c == '"' && (i == 0 || body[i - 1] != '\\')) in_quote = !in_quote;
    if (c == ',' && !in_quote) {
      items.push_back(config_trim(current));
      current.clear();
    } else {
      current += c;
    }
  }
  std::string last = config_trim(current);
  if (!last.empty()) items.push_back(last);
  for (const auto& item : items) {
    if (item.empty()) throw std::runtime_error(where + ": empty array element");
  }
  if (in_quote) throw std::runtime_error(where + ": unterminated string in array");
  return items;
}

}  // namespace detail

inline Config parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  Config config;
  std::string section;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string where = path + ":" + std::to_string(line_no);
    std::string text = detail::config_trim(detail::strip_inline_comment(line));
    if (text.empty()) continue;
    if (text.front() == '[') {
      if (text.back() != ']' || text.size() < 3) {
        throw std::runtime_error(where + ": malformed section header");
      }
      section = detail::config_trim(text.substr(1, text.size() - 2));
      if (section.empty()) throw std::runtime_error(where + ": empty section name");
      continue;
    }
    std::size_t eq = std::string::npos;
    {
      bool in_quote = false;
      for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] == '"' && (i == 0 || text[i - 1] != '\\')) in_quote = !in_quote;
        if (text[i] == '=' && !in_quote) {
          eq = i;
          break;
        }
      }
    }
    if (eq == std::string::npos) throw std::runtime_error(where + ": expected 'key = value'");
    std::string key = detail::config_trim(text.substr(0, eq));
    std::string raw = detail::config_trim(text.substr(eq + 1));
    if (key.empty()) throw std::runtime_error(where + ": empty key");
    if (raw.empty()) throw std::runtime_error(where + ": empty value");

    Config::Value value;
    if (raw.front() == '[') {
      if (raw.back() != ']') throw std::runtime_error(where + ": arrays must close on the same line");
      value.kind = Config::Value::Kind::kArray;
      for (const auto& item : detail::split_array_items(raw.substr(1, raw.size() - 2), where)) {
        value.items.push_back(detail::parse_config_scalar(item, where));
      }
    } else {
      value = detail::parse_config_scalar(raw, where);
    }
    std::string full_key = section.empty() ? key : section + "." + key;
    config.set(full_key, std::move(value));
  }
  return config;
}

}  // namespace popbench
