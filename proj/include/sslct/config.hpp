#pragma once

// Line-oriented run configuration: UTF-8 `key = value` pairs with dotted
// section prefixes ("train.epochs = 4"). Blank lines and `#` comments are
// ignored; duplicate keys are an error.

#include <cstdint>
#include <string>
#include <vector>

#include "sslct/tensor.hpp"

namespace sslct {

struct KeyValueConfig {
  std::vector<std::pair<std::string, std::string>> items;  // insertion order

  static KeyValueConfig parse_string(const std::string& text, const std::string& origin = "");
  static KeyValueConfig parse_file(const std::string& path);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;  // ConfigError if absent
  std::string get_or(const std::string& key, const std::string& fallback) const;

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& fallback) const;
  std::vector<std::string> get_string_list(const std::string& key) const;  // empty if absent

  void set(const std::string& key, const std::string& value);  // insert or overwrite

  // Canonical serialization: one `key = value` line per item, insertion order.
  std::string to_string() const;
};

}  // namespace sslct
