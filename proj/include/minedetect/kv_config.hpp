#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "minedetect/error.hpp"
#include "minedetect/text.hpp"

namespace minedetect {

/// Flat `section.key=value` configuration. Blank lines and lines starting
/// with '#' or ';' are ignored. Later assignments overwrite earlier ones.
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(std::string_view body) {
    KvConfig cfg;
    std::size_t lineno = 0;
    for (auto raw : text::lines(body)) {
      ++lineno;
      auto line = text::trim(raw);
      if (line.empty() || line.front() == '#' || line.front() == ';') continue;
      auto eq = line.find('=');
      if (eq == std::string_view::npos)
        throw Error(Errc::InvalidConfig, "expected key=value, got '" + std::string(line) + "'", lineno);
      auto key = text::trim(line.substr(0, eq));
      if (key.empty()) throw Error(Errc::InvalidConfig, "empty key", lineno);
      cfg.values_[std::string(key)] = std::string(text::trim(line.substr(eq + 1)));
    }
    return cfg;
  }

  static KvConfig load(const std::string& path) { return parse(text::read_file(path)); }

  void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }
  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string get_or(const std::string& key, std::string fallback) const {
    auto v = get(key);
    return v ? *v : fallback;
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    auto d = text::to_double(*v);
    if (!d) throw Error(Errc::InvalidConfig, key + ": not a number: '" + *v + "'");
    return *d;
  }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    auto d = text::to_int(*v);
    if (!d) throw Error(Errc::InvalidConfig, key + ": not an integer: '" + *v + "'");
    return *d;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    auto s = text::lower(*v);
    if (s == "1" || s == "true" || s == "yes" || s == "on") return true;
    if (s == "0" || s == "false" || s == "no" || s == "off") return false;
    throw Error(Errc::InvalidConfig, key + ": not a boolean: '" + *v + "'");
  }

  /// Comma-separated list; empty value gives an empty list.
  std::optional<std::vector<std::string>> get_list(const std::string& key) const {
    auto v = get(key);
    if (!v) return std::nullopt;
    std::vector<std::string> out;
    if (text::trim(*v).empty()) return out;
    for (auto part : text::split(*v, ',')) {
      auto t = text::trim(part);
      if (!t.empty()) out.emplace_back(t);
    }
    return out;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace minedetect
