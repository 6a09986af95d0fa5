#include "sslct/config.hpp"

#include <fstream>
#include <sstream>

namespace sslct {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_string(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  const std::string where = origin.empty() ? "config" : origin;
  while (std::getline(ss, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(where + ":" + std::to_string(lineno) + ": expected `key = value`, got `" +
                        t + "`");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw ConfigError(where + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.has(key))
      throw ConfigError(where + ":" + std::to_string(lineno) + ": duplicate key " + key);
    cfg.items.push_back({key, value});
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_string(buf.str(), path);
}

bool KeyValueConfig::has(const std::string& key) const {
  for (const auto& [k, v] : items)
    if (k == key) return true;
  return false;
}

const std::string& KeyValueConfig::get(const std::string& key) const {
  for (const auto& [k, v] : items)
    if (k == key) return v;
  throw ConfigError("missing required config key: " + key);
}

std::string KeyValueConfig::get_or(const std::string& key, const std::string& fallback) const {
  for (const auto& [k, v] : items)
    if (k == key) return v;
  return fallback;
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string& s = get(key);
  try {
    size_t pos = 0;
    const std::int64_t v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected integer, got `" + s + "`");
  }
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string& s = get(key);
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected number, got `" + s + "`");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& s = get(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key " + key + ": expected boolean, got `" + s + "`");
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key,
                                              const std::vector<int>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<int> out;
  for (const auto& part : split_commas(get(key))) {
    try {
      size_t pos = 0;
      out.push_back(std::stoi(part, &pos));
      if (pos != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": expected integer list, got `" + get(key) + "`");
    }
  }
  return out;
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key,
                                                    const std::vector<double>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  for (const auto& part : split_commas(get(key))) {
    try {
      size_t pos = 0;
      out.push_back(std::stod(part, &pos));
      if (pos != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      throw ConfigError("config key " + key + ": expected number list, got `" + get(key) + "`");
    }
  }
  return out;
}

std::vector<std::string> KeyValueConfig::get_string_list(const std::string& key) const {
  if (!has(key)) return {};
  return split_commas(get(key));
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : items)
    if (k == key) {
      v = value;
      return;
    }
  items.push_back({key, value});
}

std::string KeyValueConfig::to_string() const {
  std::string out;
  for (const auto& [k, v] : items) out += k + " = " + v + "\n";
  return out;
}

}  // namespace sslct
